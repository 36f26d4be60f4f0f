//! Label-skewed client partitions.
//!
//! For every class, client proportions are drawn from a symmetric Dirichlet
//! distribution and that class's samples are dealt out with largest-remainder
//! rounding. Small concentration parameters give each client a handful of
//! dominant classes.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{AreaError, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Partition {
    assignment: Vec<usize>,
    clients: Vec<Vec<usize>>,
}

impl Partition {
    pub fn from_assignment(assignment: Vec<usize>, n: usize) -> Result<Self> {
        let mut clients = vec![Vec::new(); n];
        for (sample, &c) in assignment.iter().enumerate() {
            if c >= n {
                return Err(AreaError::config(format!("sample {sample} assigned to client {c} >= {n}")));
            }
            clients[c].push(sample);
        }
        Ok(Self { assignment, clients })
    }

    pub fn client_count(&self) -> usize {
        self.clients.len()
    }

    /// Client of each sample.
    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    /// Sample indices of client `i`, ascending.
    pub fn client_samples(&self, i: usize) -> &[usize] {
        &self.clients[i]
    }

    pub fn counts(&self) -> Vec<usize> {
        self.clients.iter().map(Vec::len).collect()
    }

    /// CSV with columns `sample_id,client_id` (client ids one-based).
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["sample_id", "client_id"])?;
        for (s, c) in self.assignment.iter().enumerate() {
            w.write_record([s.to_string(), (c + 1).to_string()])?;
        }
        w.flush().map_err(|e| AreaError::io("<partition>", e))?;
        Ok(())
    }
}

fn dirichlet<R: Rng + ?Sized>(a: f64, n: usize, rng: &mut R) -> Vec<f64> {
    let gamma = Gamma::new(a, 1.0).expect("positive concentration");
    let draws: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    if total > 0.0 && total.is_finite() {
        draws.iter().map(|g| g / total).collect()
    } else {
        vec![1.0 / n as f64; n]
    }
}

/// Integer counts summing to `total`, proportional to `weights`, rounding by
/// largest remainder (ties to the lower index).
fn largest_remainder(weights: &[f64], total: usize) -> Vec<usize> {
    let raw: Vec<f64> = weights.iter().map(|w| w * total as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = raw[a] - raw[a].floor();
        let fb = raw[b] - raw[b].floor();
        fb.partial_cmp(&fa).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

pub fn dirichlet_partition<R: Rng + ?Sized>(
    labels: &[u8],
    classes: usize,
    a: f64,
    n: usize,
    rng: &mut R,
) -> Result<Partition> {
    if !(a > 0.0 && a.is_finite()) {
        return Err(AreaError::config(format!("dirichlet concentration must be positive, got {a}")));
    }
    if n == 0 || n > labels.len() {
        return Err(AreaError::config(format!(
            "cannot split {} samples over {n} clients",
            labels.len()
        )));
    }
    let mut assignment = vec![usize::MAX; labels.len()];
    for class in 0..classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&j| labels[j] as usize == class).collect();
        if members.is_empty() {
            continue;
        }
        members.shuffle(rng);
        let shares = dirichlet(a, n, rng);
        let counts = largest_remainder(&shares, members.len());
        let mut cursor = 0;
        for (client, &c) in counts.iter().enumerate() {
            for &sample in &members[cursor..cursor + c] {
                assignment[sample] = client;
            }
            cursor += c;
        }
    }
    if assignment.iter().any(|&c| c == usize::MAX) {
        return Err(AreaError::config("labels outside the declared class range"));
    }

    let mut sizes = vec![0usize; n];
    for &c in &assignment {
        sizes[c] += 1;
    }
    while let Some(empty) = sizes.iter().position(|&s| s == 0) {
        let largest = (0..n).max_by(|&x, &y| sizes[x].cmp(&sizes[y]).then(y.cmp(&x))).expect("n > 0");
        let donor = assignment
            .iter()
            .rposition(|&c| c == largest)
            .expect("largest client holds a sample");
        assignment[donor] = empty;
        sizes[largest] -= 1;
        sizes[empty] += 1;
    }
    Partition::from_assignment(assignment, n)
}
