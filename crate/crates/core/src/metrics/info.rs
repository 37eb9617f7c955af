//! Histogram mutual information, MIS and MIR.
//!
//! Variables with at most [`HIST_BINS`] distinct values are binned by value,
//! so discrete factor labels are used exactly. Continuous variables get
//! equal-count bins by rank, with tied values always sharing a bin.

use crate::error::{Error, Result};

pub const HIST_BINS: usize = 20;
/// Mean KL (nats) a latent dimension needs to count as informative.
pub const MIR_KL_THRESHOLD: f64 = 0.05;
const MIN_ROWS: usize = 100;

/// Bin codes in `0..bins` and the number of bins used.
pub fn discretize(values: &[f64], bins: usize) -> (Vec<usize>, usize) {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut distinct = 0;
    for (i, &o) in order.iter().enumerate() {
        if i == 0 || values[o] != values[order[i - 1]] {
            distinct += 1;
        }
    }
    let mut codes = vec![0; n];
    if distinct <= bins {
        let mut code = 0;
        for (i, &o) in order.iter().enumerate() {
            if i > 0 && values[o] != values[order[i - 1]] {
                code += 1;
            }
            codes[o] = code;
        }
        return (codes, distinct);
    }
    // A run of ties takes the bin of its first rank.
    let mut bin = 0;
    for (i, &o) in order.iter().enumerate() {
        if i == 0 || values[o] != values[order[i - 1]] {
            bin = i * bins / n;
        }
        codes[o] = bin;
    }
    (codes, bins)
}

fn counts(codes: &[usize], k: usize) -> Vec<usize> {
    let mut c = vec![0; k];
    for &v in codes {
        c[v] += 1;
    }
    c
}

/// Plug-in entropy in nats of a code vector with `k` symbols.
pub fn entropy(codes: &[usize], k: usize) -> f64 {
    let n = codes.len() as f64;
    counts(codes, k)
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Plug-in mutual information in nats between two code vectors.
pub fn mutual_information(a: &[usize], ka: usize, b: &[usize], kb: usize) -> f64 {
    let n = a.len();
    let mut joint = vec![0usize; ka * kb];
    for (&x, &y) in a.iter().zip(b) {
        joint[x * kb + y] += 1;
    }
    let (ca, cb) = (counts(a, ka), counts(b, kb));
    let mut mi = 0.0;
    for x in 0..ka {
        for y in 0..kb {
            let c = joint[x * kb + y];
            if c == 0 {
                continue;
            }
            // Integer ratio keeps exactly independent tables at exactly zero.
            let ratio = (c * n) as f64 / (ca[x] * cb[y]) as f64;
            mi += c as f64 / n as f64 * ratio.ln();
        }
    }
    mi.max(0.0)
}

/// Posterior means aligned row-wise with ground-truth factors.
#[derive(Debug, Clone)]
pub struct LatentTable {
    pub latents: Vec<Vec<f64>>,
    pub labels: Vec<Vec<f64>>,
    /// Mean KL per latent dimension; `None` treats every dimension as active.
    pub kl: Option<Vec<f64>>,
}

impl LatentTable {
    pub fn new(latents: Vec<Vec<f64>>, labels: Vec<Vec<f64>>) -> Result<Self> {
        if latents.len() != labels.len() {
            return Err(Error::Contract(format!(
                "{} latent rows but {} label rows",
                latents.len(),
                labels.len()
            )));
        }
        let d = latents.first().map_or(0, Vec::len);
        let k = labels.first().map_or(0, Vec::len);
        if latents.iter().any(|r| r.len() != d) || labels.iter().any(|r| r.len() != k) {
            return Err(Error::Contract("ragged latent or label rows".into()));
        }
        Ok(Self {
            latents,
            labels,
            kl: None,
        })
    }

    pub fn with_kl(mut self, kl: Vec<f64>) -> Self {
        self.kl = Some(kl);
        self
    }

    pub fn rows(&self) -> usize {
        self.latents.len()
    }

    pub fn latent_dim(&self) -> usize {
        self.latents.first().map_or(0, Vec::len)
    }

    pub fn factor_count(&self) -> usize {
        self.labels.first().map_or(0, Vec::len)
    }

    pub fn latent_column(&self, j: usize) -> Vec<f64> {
        self.latents.iter().map(|r| r[j]).collect()
    }

    pub fn label_column(&self, k: usize) -> Vec<f64> {
        self.labels.iter().map(|r| r[k]).collect()
    }

    fn check_rows(&self) -> Result<()> {
        if self.rows() < MIN_ROWS {
            return Err(Error::Contract(format!(
                "mutual-information metrics need >= {MIN_ROWS} rows, got {}",
                self.rows()
            )));
        }
        Ok(())
    }
}

fn binned(columns: impl Iterator<Item = Vec<f64>>) -> Vec<(Vec<usize>, usize)> {
    columns.map(|c| discretize(&c, HIST_BINS)).collect()
}

/// Mean pairwise normalized MI between latent dimensions (lower is better).
pub fn mis(latents: &[Vec<f64>]) -> Result<f64> {
    if latents.len() < MIN_ROWS {
        return Err(Error::Contract(format!(
            "mis needs >= {MIN_ROWS} rows, got {}",
            latents.len()
        )));
    }
    let d = latents[0].len();
    let cols = binned((0..d).map(|j| latents.iter().map(|r| r[j]).collect()));
    let h: Vec<f64> = cols.iter().map(|(c, k)| entropy(c, *k)).collect();
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..d {
        for j in i + 1..d {
            pairs += 1;
            let norm = h[i].min(h[j]);
            if norm > 0.0 {
                total += mutual_information(&cols[i].0, cols[i].1, &cols[j].0, cols[j].1) / norm;
            }
        }
    }
    Ok(if pairs == 0 {
        0.0
    } else {
        total / pairs as f64
    })
}

/// MIR and the per-dimension statistics behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct Mir {
    pub score: f64,
    /// Per latent dimension: `(argmax factor, ratio)`, `None` if inactive.
    pub per_dim: Vec<Option<(usize, f64)>>,
    /// `mi[j][k]` in nats.
    pub mi: Vec<Vec<f64>>,
}

pub fn mir_score(table: &LatentTable) -> Result<Mir> {
    table.check_rows()?;
    let (d, k) = (table.latent_dim(), table.factor_count());
    if k < 2 {
        return Err(Error::Contract("mir needs at least two factors".into()));
    }
    let z = binned((0..d).map(|j| table.latent_column(j)));
    let v = binned((0..k).map(|f| table.label_column(f)));
    let mut per_dim = Vec::with_capacity(d);
    let mut mi = Vec::with_capacity(d);
    for j in 0..d {
        let row: Vec<f64> = v
            .iter()
            .map(|(c, kv)| mutual_information(&z[j].0, z[j].1, c, *kv))
            .collect();
        let active = table
            .kl
            .as_ref()
            .map_or(true, |kl| kl[j] > MIR_KL_THRESHOLD);
        let total: f64 = row.iter().sum();
        let entry = (active && total > 0.0).then(|| {
            let (arg, max) = row
                .iter()
                .enumerate()
                .fold(
                    (0, f64::NEG_INFINITY),
                    |b, (i, &m)| if m > b.1 { (i, m) } else { b },
                );
            (arg, max / total)
        });
        per_dim.push(entry);
        mi.push(row);
    }
    let ratios: Vec<f64> = per_dim.iter().flatten().map(|&(_, r)| r).collect();
    if ratios.is_empty() {
        return Err(Error::CollapsedSpace);
    }
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    let chance = 1.0 / k as f64;
    Ok(Mir {
        score: (mean - chance) / (1.0 - chance),
        per_dim,
        mi,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ties_share_a_bin() {
        let v = [0.0, 1.0, 1.0, 1.0, 2.0, 3.0];
        let (codes, k) = discretize(&v, 3);
        assert_eq!(k, 3);
        assert_eq!(codes[1], codes[2]);
        assert_eq!(codes[2], codes[3]);
        let (codes, k) = discretize(&[5.0, 5.0, 7.0], 20);
        assert_eq!((codes, k), (vec![0, 0, 1], 2));
    }

    #[test]
    fn independent_grid_has_zero_mi() {
        let a: Vec<usize> = (0..12).map(|i| i % 3).collect();
        let b: Vec<usize> = (0..12).map(|i| i / 3).collect();
        assert_eq!(mutual_information(&a, 3, &b, 4), 0.0);
        assert!((mutual_information(&a, 3, &a, 3) - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn single_dimension_has_no_pairs() {
        let rows: Vec<Vec<f64>> = (0..120).map(|i| vec![i as f64]).collect();
        assert_eq!(mis(&rows).unwrap(), 0.0);
    }

    #[test]
    fn collapsed_space_is_an_error() {
        let latents: Vec<Vec<f64>> = (0..120).map(|i| vec![i as f64, 0.0]).collect();
        let labels: Vec<Vec<f64>> = (0..120)
            .map(|i| vec![(i % 4) as f64, (i % 3) as f64])
            .collect();
        let t = LatentTable::new(latents, labels)
            .unwrap()
            .with_kl(vec![0.01, 0.0]);
        assert!(matches!(mir_score(&t), Err(Error::CollapsedSpace)));
    }
}
