//! Kernel view of demo assignment.
//!
//! In-context prediction is modelled as Nadaraya-Watson regression over the
//! demos: `y(q) = Σ_j y_j K(q, x_j) / Σ_j K(q, x_j)`. Restricting an expert
//! to its own cluster changes the prediction by an amount tied to the kernel
//! mass falling outside the cluster, which is what [`kernel_objective`]
//! measures.

use serde::{Deserialize, Serialize};

use super::{check_dimensions, dot, groups_from_labels, squared_distance, ClusterError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelSpec {
    /// `K(a, b) = a · b`
    DotProduct,
    /// `K(a, b) = exp(-‖a - b‖² / (2 h²))`
    Rbf { bandwidth: f64 },
}

impl KernelSpec {
    pub fn rbf(bandwidth: f64) -> Result<Self, ClusterError> {
        let k = KernelSpec::Rbf { bandwidth };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), ClusterError> {
        match *self {
            KernelSpec::Rbf { bandwidth } if !(bandwidth.is_finite() && bandwidth > 0.0) => {
                Err(ClusterError::InvalidBandwidth(bandwidth))
            }
            _ => Ok(()),
        }
    }

    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            KernelSpec::DotProduct => dot(a, b),
            KernelSpec::Rbf { bandwidth } => {
                (-squared_distance(a, b) / (2.0 * bandwidth * bandwidth)).exp()
            }
        }
    }
}

/// `Σ_c (Σ_{i∈V_c} Σ_{j∉V_c} K(x_i, x_j)) / |V_c|`: between-cluster kernel
/// mass, each cluster weighted by its inverse size.
pub fn kernel_objective<V: AsRef<[f64]>>(
    vectors: &[V],
    labels: &[usize],
    kernel: &KernelSpec,
) -> Result<f64, ClusterError> {
    kernel.validate()?;
    check_dimensions(vectors)?;
    let groups = groups_from_labels(vectors.len(), labels)?;
    let mut total = 0.0;
    for members in groups.iter().filter(|g| !g.is_empty()) {
        let mut outside = 0.0;
        for &i in members {
            for (j, &lj) in labels.iter().enumerate() {
                if lj != labels[i] {
                    outside += kernel.eval(vectors[i].as_ref(), vectors[j].as_ref());
                }
            }
        }
        total += outside / members.len() as f64;
    }
    Ok(total)
}

/// Within-cluster scatter written purely in kernel evaluations:
/// `Σ_c Σ_{i∈V_c} (K(x_i,x_i) - 2 Σ_{j∈V_c} K(x_i,x_j)/|V_c| + Σ_{j,k∈V_c} K(x_j,x_k)/|V_c|²)`.
/// Under the dot-product kernel this equals the K-means inertia.
pub fn kernel_inertia<V: AsRef<[f64]>>(
    vectors: &[V],
    labels: &[usize],
    kernel: &KernelSpec,
) -> Result<f64, ClusterError> {
    kernel.validate()?;
    check_dimensions(vectors)?;
    let groups = groups_from_labels(vectors.len(), labels)?;
    let k = |i: usize, j: usize| kernel.eval(vectors[i].as_ref(), vectors[j].as_ref());
    let mut total = 0.0;
    for members in groups.iter().filter(|g| !g.is_empty()) {
        let size = members.len() as f64;
        let pair_mass: f64 = members
            .iter()
            .flat_map(|&j| members.iter().map(move |&l| (j, l)))
            .map(|(j, l)| k(j, l))
            .sum();
        for &i in members {
            let row: f64 = members.iter().map(|&j| k(i, j)).sum();
            total += k(i, i) - 2.0 * row / size + pair_mass / (size * size);
        }
    }
    Ok(total)
}

/// Nadaraya-Watson prediction at `query` from `(embedding, label)` demos.
pub fn kernel_regression_predict<V: AsRef<[f64]>>(
    demos: &[(V, f64)],
    query: &[f64],
    kernel: &KernelSpec,
) -> Result<f64, ClusterError> {
    kernel.validate()?;
    predict_subset(demos, demos.iter().map(|_| true), query, kernel)
        .ok_or(ClusterError::ZeroKernelMass { index: None })
}

fn predict_subset<V: AsRef<[f64]>>(
    demos: &[(V, f64)],
    include: impl Iterator<Item = bool>,
    query: &[f64],
    kernel: &KernelSpec,
) -> Option<f64> {
    let mut weighted = 0.0;
    let mut mass = 0.0;
    for ((x, y), keep) in demos.iter().zip(include) {
        if keep {
            let w = kernel.eval(query, x.as_ref());
            weighted += y * w;
            mass += w;
        }
    }
    if mass == 0.0 || !mass.is_finite() {
        return None;
    }
    let value = weighted / mass;
    value.is_finite().then_some(value)
}

/// For each demo `i` in cluster `c`, `|ȳ_i − ŷ_i|` where `ŷ_i` regresses on
/// every demo and `ȳ_i` only on the members of `c`.
pub fn restriction_error<V: AsRef<[f64]>>(
    demos: &[(V, f64)],
    labels: &[usize],
    kernel: &KernelSpec,
) -> Result<Vec<f64>, ClusterError> {
    kernel.validate()?;
    let points: Vec<&[f64]> = demos.iter().map(|(x, _)| x.as_ref()).collect();
    check_dimensions(&points)?;
    groups_from_labels(demos.len(), labels)?;
    (0..demos.len())
        .map(|i| {
            let query = points[i];
            let full = predict_subset(demos, demos.iter().map(|_| true), query, kernel);
            let local = predict_subset(demos, labels.iter().map(|&l| l == labels[i]), query, kernel);
            match (full, local) {
                (Some(f), Some(l)) => Ok((l - f).abs()),
                _ => Err(ClusterError::ZeroKernelMass { index: Some(i) }),
            }
        })
        .collect()
}
