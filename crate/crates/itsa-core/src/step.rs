use diffnet::{DiffModel, NdArray, Scalar, Want};

use crate::config::ScpConfig;
use crate::error::{ItsaError, Result};
use crate::fisher::fisher_loss_with_grad;
use crate::scp::{scp_direction, scp_perturb, ScpDirection};

/// Output of the task closure for one set of features.
#[derive(Clone, Debug)]
pub struct TaskEval<T> {
    pub loss: f64,
    /// Gradient of `loss` with respect to each view's features.
    pub feature_grads: Vec<NdArray<T>>,
    /// Gradients for the parameters owned by the task head.
    pub head_grads: Vec<NdArray<T>>,
}

#[derive(Clone, Debug)]
pub struct ItsaStep<T> {
    pub total_loss: f64,
    pub task_loss: f64,
    /// Feature-distance term per view (zero when not computed).
    pub fisher: Vec<f64>,
    pub extractor_grads: Vec<NdArray<T>>,
    pub head_grads: Vec<NdArray<T>>,
    /// Perturbation directions per view; empty when no perturbation was needed.
    pub directions: Vec<ScpDirection<T>>,
}

/// One objective evaluation for views that share an extractor.
///
/// The objective is `task + lambda / n_views * sum_v L_FI(z_v, z*_v)`. With
/// `perturbed_task` the task loss is the mean over clean and perturbed
/// features. `frozen` supplies precomputed directions instead of
/// recomputing them. Extractor gradients are accumulated view by view in the
/// order clean, perturbed.
pub fn itsa_step<T, M, F>(
    extractor: &M,
    views: &[&NdArray<T>],
    cfg: &ScpConfig,
    frozen: Option<&[NdArray<T>]>,
    mut task: F,
) -> Result<ItsaStep<T>>
where
    T: Scalar,
    M: DiffModel<T>,
    F: FnMut(&[NdArray<T>]) -> Result<TaskEval<T>>,
{
    cfg.validate()?;
    if views.is_empty() {
        return Err(ItsaError::InvalidConfig("itsa_step needs at least one view".into()));
    }
    if let Some(f) = frozen {
        if f.len() != views.len() {
            return Err(ItsaError::InvalidConfig(format!(
                "{} frozen directions for {} views",
                f.len(),
                views.len()
            )));
        }
    }
    let n_views = views.len();
    let mut z = Vec::with_capacity(n_views);
    let mut traces = Vec::with_capacity(n_views);
    for x in views {
        let (zv, tr) = extractor.forward_trace(x)?;
        z.push(zv);
        traces.push(tr);
    }

    let mut directions = Vec::new();
    let mut z_star = Vec::new();
    let mut traces_star = Vec::new();
    if cfg.needs_perturbation() {
        for (v, x) in views.iter().enumerate() {
            let u = match frozen {
                Some(f) => {
                    f[v].check_same_shape(x, "frozen direction")?;
                    let norms = f[v].sample_norms();
                    ScpDirection {
                        u: f[v].clone(),
                        degenerate: norms.iter().map(|&n| n == 0.0).collect(),
                        grad_norms: norms,
                    }
                }
                None => scp_direction(extractor, x, cfg)?,
            };
            let xs = scp_perturb(x, &u.u, cfg.epsilon)?;
            let (zs, tr) = extractor.forward_trace(&xs)?;
            directions.push(u);
            z_star.push(zs);
            traces_star.push(tr);
        }
    }

    let clean = task(&z)?;
    check_task_eval(&clean, &z)?;
    let mut dz = clean.feature_grads;
    let mut head_grads = clean.head_grads;
    let mut task_loss = clean.loss;
    let mut dz_star: Vec<Option<NdArray<T>>> = vec![None; z_star.len()];
    if cfg.perturbed_task {
        let pert = task(&z_star)?;
        check_task_eval(&pert, &z_star)?;
        task_loss = 0.5 * (task_loss + pert.loss);
        let half = T::from_f64_lossy(0.5);
        dz = dz.iter().map(|g| g.scale(half)).collect();
        for (h, p) in head_grads.iter_mut().zip(&pert.head_grads) {
            *h = h.scale(half);
            h.axpy(half, p)?;
        }
        for (slot, g) in dz_star.iter_mut().zip(pert.feature_grads) {
            *slot = Some(g.scale(half));
        }
    }

    let mut fisher = vec![0.0; n_views];
    let weight = cfg.lambda / n_views as f64;
    if cfg.lambda > 0.0 {
        for v in 0..n_views {
            let fl = fisher_loss_with_grad(&z[v], &z_star[v], cfg.reduction)?;
            fisher[v] = fl.value;
            if fl.per_sample.iter().all(|&d| d == 0.0) {
                continue;
            }
            let w = T::from_f64_lossy(weight);
            dz[v].axpy(w, &fl.grad_z)?;
            match &mut dz_star[v] {
                Some(g) => g.axpy(w, &fl.grad_z_star)?,
                slot => *slot = Some(fl.grad_z_star.scale(w)),
            }
        }
    }
    let total_loss = task_loss + weight * fisher.iter().sum::<f64>();

    let mut extractor_grads: Option<Vec<NdArray<T>>> = None;
    let mut accumulate = |grads: Vec<NdArray<T>>| -> Result<()> {
        match &mut extractor_grads {
            None => extractor_grads = Some(grads),
            Some(acc) => {
                for (a, g) in acc.iter_mut().zip(&grads) {
                    a.add_assign(g)?;
                }
            }
        }
        Ok(())
    };
    for v in 0..n_views {
        accumulate(extractor.backward(&traces[v], &dz[v], Want::PARAMS)?.params)?;
        if let Some(Some(g)) = dz_star.get(v) {
            accumulate(extractor.backward(&traces_star[v], g, Want::PARAMS)?.params)?;
        }
    }

    Ok(ItsaStep {
        total_loss,
        task_loss,
        fisher,
        extractor_grads: extractor_grads.unwrap_or_default(),
        head_grads,
        directions,
    })
}

fn check_task_eval<T: Scalar>(eval: &TaskEval<T>, z: &[NdArray<T>]) -> Result<()> {
    if eval.feature_grads.len() != z.len() {
        return Err(ItsaError::InvalidConfig(format!(
            "task returned {} feature gradients for {} views",
            eval.feature_grads.len(),
            z.len()
        )));
    }
    for (g, zv) in eval.feature_grads.iter().zip(z) {
        g.check_same_shape(zv, "task feature gradient")?;
    }
    Ok(())
}
