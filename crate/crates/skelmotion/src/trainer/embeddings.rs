//! Decoder embedding export: per-sample activations of each branch's
//! second-to-last layer, projected to three principal components.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::Model;
use crate::nn::GraphCtx;
use crate::trainer::data::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Physics,
    NonPhysics,
}

impl Branch {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "physics" => Ok(Branch::Physics),
            "nonphysics" => Ok(Branch::NonPhysics),
            other => Err(Error::InvalidArgument(format!(
                "unknown branch `{other}` (expected physics or nonphysics)"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Branch::Physics => "physics",
            Branch::NonPhysics => "nonphysics",
        }
    }
}

#[derive(Debug, Clone)]
pub struct EmbeddingRow {
    pub pc1: f64,
    pub pc2: f64,
    pub pc3: f64,
    pub branch: String,
    pub label: i64,
}

/// Top-3 principal components of row-major features (n x d). Returns the
/// projected points (n x 3), the components (3 x d, orthonormal rows), and
/// the corresponding eigenvalues in descending order.
pub fn pca3(features: &[Vec<f64>]) -> Result<(Vec<[f64; 3]>, Vec<Vec<f64>>, [f64; 3])> {
    let n = features.len();
    if n == 0 {
        return Err(Error::InvalidArgument("no feature rows".into()));
    }
    let d = features[0].len();
    if d < 3 {
        return Err(Error::InvalidArgument(format!(
            "need at least 3 feature dimensions for a 3-D projection, got {d}"
        )));
    }
    let mut mean = vec![0.0; d];
    for row in features {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }
    let denom = if n > 1 { (n - 1) as f64 } else { 1.0 };
    let mut cov = DMatrix::zeros(d, d);
    for row in features {
        for i in 0..d {
            let ci = row[i] - mean[i];
            for j in 0..d {
                cov[(i, j)] += ci * (row[j] - mean[j]) / denom;
            }
        }
    }
    let eig = nalgebra::SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|a, b| {
        let (va, vb): (f64, f64) = (eig.eigenvalues[*a], eig.eigenvalues[*b]);
        vb.partial_cmp(&va).expect("finite eigenvalues")
    });
    let mut components = Vec::with_capacity(3);
    let mut eigenvalues = [0.0; 3];
    for (k, &idx) in order.iter().take(3).enumerate() {
        components.push(eig.eigenvectors.column(idx).iter().copied().collect::<Vec<f64>>());
        eigenvalues[k] = eig.eigenvalues[idx];
    }
    let projected = features
        .iter()
        .map(|row| {
            let mut p = [0.0; 3];
            for (k, comp) in components.iter().enumerate() {
                p[k] = row
                    .iter()
                    .zip(comp)
                    .zip(&mean)
                    .map(|((x, c), m)| (x - m) * c)
                    .sum();
            }
            p
        })
        .collect();
    Ok((projected, components, eigenvalues))
}

/// Collect the chosen branch's second-to-last-layer activations for every
/// sample (mean over the horizon tokens), PCA them to three components, and
/// tag each point with its branch and label.
pub fn export_embeddings(
    model: &Model,
    data: &Dataset,
    branch: Branch,
) -> Result<Vec<EmbeddingRow>> {
    match branch {
        Branch::Physics if model.phys_dec.is_none() => {
            return Err(Error::InvalidArgument(
                "model variant has no physics decoder".into(),
            ))
        }
        Branch::NonPhysics if model.nonphys_dec.is_none() => {
            return Err(Error::InvalidArgument(
                "model variant has no non-physics decoder".into(),
            ))
        }
        _ => {}
    }
    let mut features = Vec::with_capacity(data.len());
    for sample in &data.samples {
        let mut ctx = GraphCtx::new(&model.store, false);
        let nodes = model.forward_nodes(
            &mut ctx,
            &sample.obs,
            sample.action,
            true,
            crate::decoders::Reprojection::Learned,
        )?;
        let feat_node = match branch {
            Branch::Physics => nodes.phys.as_ref().expect("checked above").features,
            Branch::NonPhysics => nodes.nonphys.as_ref().expect("checked above").features,
        };
        let pooled = ctx.gb.mean_rows(feat_node)?;
        features.push(ctx.gb.value(pooled).data().to_vec());
    }
    let (projected, _, _) = pca3(&features)?;
    Ok(projected
        .into_iter()
        .zip(&data.samples)
        .map(|(p, s)| EmbeddingRow {
            pc1: p[0],
            pc2: p[1],
            pc3: p[2],
            branch: branch.as_str().to_string(),
            label: s.label_value,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::init::seeded_rng;
    use rand::Rng;

    #[test]
    fn components_orthonormal_and_variance_ordered() {
        let mut rng = seeded_rng(5);
        // Anisotropic cloud: variance concentrated along the first axes.
        let features: Vec<Vec<f64>> = (0..200)
            .map(|_| {
                (0..6)
                    .map(|d| rng.gen_range(-1.0..1.0) * (6 - d) as f64)
                    .collect()
            })
            .collect();
        let (projected, comps, eigs) = pca3(&features).unwrap();
        assert_eq!(projected.len(), 200);
        assert!(eigs[0] >= eigs[1] && eigs[1] >= eigs[2]);
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = comps[i].iter().zip(&comps[j]).map(|(a, b)| a * b).sum();
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((dot - expected).abs() <= 1e-9, "gram[{i}][{j}] = {dot}");
            }
        }
        // Projected variance must also be ordered.
        let var = |k: usize| -> f64 {
            let mean: f64 = projected.iter().map(|p| p[k]).sum::<f64>() / 200.0;
            projected.iter().map(|p| (p[k] - mean).powi(2)).sum::<f64>() / 199.0
        };
        assert!(var(0) >= var(1) && var(1) >= var(2));
    }

    #[test]
    fn too_few_dimensions_rejected() {
        let features = vec![vec![1.0, 2.0]; 5];
        assert!(pca3(&features).is_err());
    }
}
