use crate::autodiff::{DiffTensor, Tape, Var};
use crate::error::{Error, Result};

/// Cosine of the angle between `u` and `v`.
pub fn cosine_sim(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Shape(format!("vectors of length {} and {}", u.len(), v.len())));
    }
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::Degenerate("cosine similarity of a zero vector".into()));
    }
    let d: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    Ok((d / (nu * nv)).clamp(-1.0, 1.0))
}

/// `2M` projections; `views[2i]` and `views[2i + 1]` are the two halves
/// of clip `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveBatch {
    pub views: Vec<Vec<f64>>,
}

impl ContrastiveBatch {
    pub fn new(views: Vec<Vec<f64>>) -> Result<Self> {
        if views.len() % 2 != 0 {
            return Err(Error::Shape(format!("{} views is not 2M", views.len())));
        }
        let dim = views.first().map_or(0, Vec::len);
        if views.iter().any(|v| v.len() != dim) {
            return Err(Error::Shape("views have unequal dimensions".into()));
        }
        Ok(Self { views })
    }

    /// Number of clips `M`.
    pub fn clips(&self) -> usize {
        self.views.len() / 2
    }

    pub fn sibling(view: usize) -> usize {
        view ^ 1
    }
}

fn check(n_views: usize, tau: f64) -> Result<()> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::Parameter(format!("temperature must be positive, got {tau}")));
    }
    if n_views < 4 || n_views % 2 != 0 {
        return Err(Error::Shape(format!("NT-Xent needs 2M >= 4 views, got {n_views}")));
    }
    Ok(())
}

/// NT-Xent over a `[2M, dim]` tensor of projections already on the tape.
pub fn ntxent_on_tape(tape: &mut Tape, z: Var, tau: f64) -> Result<Var> {
    let sh = tape.shape(z).to_vec();
    let [n, dim] = sh[..] else {
        return Err(Error::Shape(format!("projections must be [2M, dim], got {sh:?}")));
    };
    check(n, tau)?;
    let zv = tape.value(z);
    if let Some(r) = (0..n).find(|&r| zv[r * dim..(r + 1) * dim].iter().all(|&x| x == 0.0)) {
        return Err(Error::Degenerate(format!(
            "projection of view {r} (clip {}) is the zero vector",
            r / 2
        )));
    }
    let u = tape.normalize_rows(z)?;
    let ut = tape.transpose(u)?;
    let sim = tape.matmul(u, ut)?;
    let logits = tape.scale(sim, 1.0 / tau);
    let targets: Vec<usize> = (0..n).map(ContrastiveBatch::sibling).collect();
    tape.softmax_xent(logits, &targets, true)
}

/// NT-Xent as a scalar tensor (no gradient tracking).
pub fn ntxent_loss(batch: &ContrastiveBatch, tau: f64) -> Result<DiffTensor> {
    let n = batch.views.len();
    check(n, tau)?;
    let dim = batch.views[0].len();
    let mut tape = Tape::new();
    let z = tape.constant(vec![n, dim], batch.views.concat())?;
    let loss = ntxent_on_tape(&mut tape, z, tau)?;
    Ok(tape.tensor(loss))
}

pub fn ntxent_value(batch: &ContrastiveBatch, tau: f64) -> Result<f64> {
    Ok(ntxent_loss(batch, tau)?.values[0])
}
