use ndarray::{concatenate, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{gram, resolve_bandwidth, KernelConfig};
use crate::transport::{cross_transport, half_self_transport, TransportConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionPolicy {
    W1min,
    Mmdmin,
}

impl std::str::FromStr for SelectionPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "w1min" => Ok(SelectionPolicy::W1min),
            "mmdmin" => Ok(SelectionPolicy::Mmdmin),
            other => Err(Error::invalid(
                "policy",
                format!("unknown selection policy `{other}`"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionConfig {
    pub batch_size: usize,
    pub rounds: usize,
    pub policy: SelectionPolicy,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            batch_size: 20,
            rounds: 5,
            policy: SelectionPolicy::W1min,
        }
    }
}

/// Greedy batch in pick order, with the anchor-to-batch distance after each
/// pick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSelection {
    pub indices: Vec<usize>,
    pub step_distances: Vec<f64>,
}

/// Distance from the anchor cloud to a growing subset of the pool.
trait SetDistance {
    /// Distance of `selected ∪ {candidate}`.
    fn with(&self, selected: &[usize], candidate: usize) -> f64;
    fn push(&mut self, _candidate: usize) {}
}

struct SinkhornSet<'a> {
    pool: ArrayView2<'a, f64>,
    anchor: ArrayView2<'a, f64>,
    anchor_self: f64,
    cfg: &'a TransportConfig,
}

impl SetDistance for SinkhornSet<'_> {
    fn with(&self, selected: &[usize], candidate: usize) -> f64 {
        let mut idx = selected.to_vec();
        idx.push(candidate);
        let set = self.pool.select(Axis(0), &idx);
        let v = cross_transport(self.anchor, set.view(), self.cfg)
            - (self.anchor_self + half_self_transport(set.view(), self.cfg));
        v.max(0.0)
    }
}

/// Biased MMD with cached Gram blocks and running sums.
struct MmdSet {
    anchor_mean: f64,
    anchor_colsum: Vec<f64>,
    pool_gram: ndarray::Array2<f64>,
    n_anchor: f64,
    within: f64,
    cross: f64,
    acc: Vec<f64>,
    k: usize,
}

impl SetDistance for MmdSet {
    fn with(&self, _selected: &[usize], c: usize) -> f64 {
        let k = (self.k + 1) as f64;
        let within = self.within + 2.0 * self.acc[c] + self.pool_gram[[c, c]];
        let cross = self.cross + self.anchor_colsum[c];
        let v = self.anchor_mean + within / (k * k) - 2.0 * cross / (self.n_anchor * k);
        v.max(0.0).sqrt()
    }

    fn push(&mut self, c: usize) {
        self.within += 2.0 * self.acc[c] + self.pool_gram[[c, c]];
        self.cross += self.anchor_colsum[c];
        for (a, kc) in self.acc.iter_mut().zip(self.pool_gram.row(c)) {
            *a += kc;
        }
        self.k += 1;
    }
}

fn greedy(dist: &mut dyn SetDistance, available: &[usize], b: usize) -> BatchSelection {
    let mut remaining = available.to_vec();
    let mut indices = Vec::with_capacity(b);
    let mut step_distances = Vec::with_capacity(b);
    for _ in 0..b {
        let mut best: Option<(usize, f64)> = None;
        for (pos, &c) in remaining.iter().enumerate() {
            let d = dist.with(&indices, c);
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((pos, d));
            }
        }
        let (pos, d) = best.expect("pool has enough points");
        let c = remaining.remove(pos);
        dist.push(c);
        indices.push(c);
        step_distances.push(d);
    }
    BatchSelection {
        indices,
        step_distances,
    }
}

fn check(
    pool: ArrayView2<'_, f64>,
    anchor: ArrayView2<'_, f64>,
    b: usize,
    available: usize,
) -> Result<()> {
    if pool.ncols() != anchor.ncols() {
        return Err(Error::DimensionMismatch {
            expected: anchor.ncols(),
            got: pool.ncols(),
        });
    }
    if anchor.nrows() == 0 {
        return Err(Error::invalid("anchor", "must not be empty"));
    }
    if b == 0 || b > available {
        return Err(Error::invalid(
            "batch_size",
            format!("must lie in 1..={available}, got {b}"),
        ));
    }
    Ok(())
}

fn build<'a>(
    pool: ArrayView2<'a, f64>,
    anchor: ArrayView2<'a, f64>,
    policy: SelectionPolicy,
    transport: &'a TransportConfig,
    kernel: &KernelConfig,
) -> Result<Box<dyn SetDistance + 'a>> {
    Ok(match policy {
        SelectionPolicy::W1min => {
            transport.validate()?;
            Box::new(SinkhornSet {
                pool,
                anchor,
                anchor_self: half_self_transport(anchor, transport),
                cfg: transport,
            })
        }
        SelectionPolicy::Mmdmin => {
            let pooled =
                concatenate(Axis(0), &[anchor.view(), pool.view()]).expect("column counts match");
            let sigma =
                resolve_bandwidth(kernel, pooled.view(), pooled.slice(ndarray::s![0..0, ..]))?;
            let kaa = gram(anchor, anchor, sigma);
            let kap = gram(anchor, pool, sigma);
            let na = anchor.nrows() as f64;
            Box::new(MmdSet {
                anchor_mean: kaa.sum() / (na * na),
                anchor_colsum: kap.sum_axis(Axis(0)).to_vec(),
                pool_gram: gram(pool, pool, sigma),
                n_anchor: na,
                within: 0.0,
                cross: 0.0,
                acc: vec![0.0; pool.nrows()],
                k: 0,
            })
        }
    })
}

/// Greedily picks `b` pool rows, each step adding the point that minimizes
/// the policy's distance between the anchor cloud and the selected set.
/// Ties go to the lowest pool index.
pub fn select_batch<'a>(
    pool: ArrayView2<'a, f64>,
    anchor: ArrayView2<'a, f64>,
    b: usize,
    policy: SelectionPolicy,
    transport: &'a TransportConfig,
    kernel: &KernelConfig,
) -> Result<BatchSelection> {
    check(pool, anchor, b, pool.nrows())?;
    let mut dist = build(pool, anchor, policy, transport, kernel)?;
    let all: Vec<usize> = (0..pool.nrows()).collect();
    Ok(greedy(dist.as_mut(), &all, b))
}

/// Successive rounds of [`select_batch`]; each round draws only from pool
/// rows not picked earlier.
pub fn select_rounds<'a>(
    pool: ArrayView2<'a, f64>,
    anchor: ArrayView2<'a, f64>,
    cfg: &SelectionConfig,
    transport: &'a TransportConfig,
    kernel: &KernelConfig,
) -> Result<Vec<BatchSelection>> {
    let total = cfg.batch_size.saturating_mul(cfg.rounds);
    check(pool, anchor, cfg.batch_size, pool.nrows())?;
    if total > pool.nrows() {
        return Err(Error::invalid(
            "rounds",
            format!(
                "{} rounds of {} exceed the pool",
                cfg.rounds, cfg.batch_size
            ),
        ));
    }
    let mut taken = vec![false; pool.nrows()];
    let mut out = Vec::with_capacity(cfg.rounds);
    for _ in 0..cfg.rounds {
        let available: Vec<usize> = (0..pool.nrows()).filter(|&i| !taken[i]).collect();
        let mut dist = build(pool, anchor, cfg.policy, transport, kernel)?;
        let sel = greedy(dist.as_mut(), &available, cfg.batch_size);
        for &i in &sel.indices {
            taken[i] = true;
        }
        out.push(sel);
    }
    Ok(out)
}
