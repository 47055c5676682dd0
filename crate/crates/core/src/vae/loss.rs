use super::{ModelState, RosettaSet, TrainConfig, VaeError};
use crate::autodiff::{GradSet, NodeId, Tape};
use crate::linalg::Matrix;

/// A recorded objective ready for differentiation.
pub struct LossGraph<'p> {
    tape: Tape<'p>,
    loss: NodeId,
    /// Batch-mean squared reconstruction error.
    pub reconstruction: f64,
    /// Batch-mean KL to the prior (before the β weight).
    pub kl: f64,
    /// Unweighted Rosetta penalty `Σ_r [‖x̂_r − m(ẑ_r)‖² + ‖ẑ_r − μ(x̂_r)‖²]`.
    pub penalty: f64,
    /// Weight actually applied to `penalty`.
    pub penalty_weight: f64,
}

impl<'p> LossGraph<'p> {
    pub fn value(&self) -> f64 {
        self.tape.scalar(self.loss)
    }

    pub fn backward(&self) -> Result<GradSet, VaeError> {
        Ok(self.tape.backward(self.loss)?)
    }
}

struct EncoderNodes {
    mean: NodeId,
    diag: NodeId,
    lower: Option<NodeId>,
}

fn trunk(model: &ModelState, tape: &mut Tape<'_>, x: NodeId) -> Result<NodeId, VaeError> {
    Ok(match &model.nets.trunk {
        Some(t) => t.forward_tape(tape, x)?,
        None => x,
    })
}

fn encoder(model: &ModelState, tape: &mut Tape<'_>, x: NodeId) -> Result<EncoderNodes, VaeError> {
    let h = trunk(model, tape, x)?;
    let mean = model.nets.mu.forward_tape(tape, h)?;
    let diag = model.nets.diag.forward_tape(tape, h)?;
    let lower = model.nets.lower.as_ref().map(|l| l.forward_tape(tape, h)).transpose()?;
    Ok(EncoderNodes { mean, diag, lower })
}

fn check_batch(model: &ModelState, batch: &Matrix, noise: &Matrix) -> Result<(), VaeError> {
    if batch.rows() == 0 {
        return Err(VaeError::EmptyBatch);
    }
    if batch.cols() != model.input_dim() {
        return Err(VaeError::DimMismatch {
            what: "batch",
            expected: model.input_dim(),
            got: batch.cols(),
        });
    }
    if noise.shape() != (batch.rows(), model.latent_dim()) {
        return Err(VaeError::DimMismatch {
            what: "noise",
            expected: model.latent_dim(),
            got: noise.cols(),
        });
    }
    Ok(())
}

/// Records `mean_b[‖x_b − m(z_b)‖² + β·KL_b]` with `z_b = μ_b + L_b·noise_b`.
fn record_elbo(
    model: &ModelState,
    tape: &mut Tape<'_>,
    batch: &Matrix,
    beta: f64,
    noise: &Matrix,
) -> Result<(NodeId, f64, f64), VaeError> {
    check_batch(model, batch, noise)?;
    let x = tape.constant(batch.clone());
    let enc = encoder(model, tape, x)?;
    let z = tape.reparam(enc.mean, enc.diag, enc.lower, noise.clone())?;
    let recon = model.nets.decoder.forward_tape(tape, z)?;
    let diff = tape.sub(x, recon)?;
    let sq = tape.row_squared_norm(diff);
    let kl = tape.gaussian_kl(enc.mean, enc.diag, enc.lower)?;
    let kl_scaled = tape.scale(kl, beta);
    let per_row = tape.add(sq, kl_scaled)?;
    let loss = tape.mean(per_row);
    let recon_mean = mean_of(tape.value(sq));
    let kl_mean = mean_of(tape.value(kl));
    Ok((loss, recon_mean, kl_mean))
}

fn mean_of(m: &Matrix) -> f64 {
    m.as_slice().iter().sum::<f64>() / m.as_slice().len().max(1) as f64
}

/// Negative β-ELBO (up to constants) for a unit-variance Gaussian decoder,
/// averaged over the batch. `noise` holds one standard-normal draw per row.
pub fn elbo_loss<'p>(
    model: &'p ModelState,
    batch: &Matrix,
    beta: f64,
    noise: &Matrix,
) -> Result<LossGraph<'p>, VaeError> {
    let mut tape = Tape::new(&model.params);
    let (loss, reconstruction, kl) = record_elbo(model, &mut tape, batch, beta, noise)?;
    let graph = LossGraph {
        tape,
        loss,
        reconstruction,
        kl,
        penalty: 0.0,
        penalty_weight: 0.0,
    };
    if !graph.value().is_finite() {
        return Err(VaeError::NonFinite("loss"));
    }
    Ok(graph)
}

/// Weight applied to the Rosetta penalty: `ρ·R/B` when weighting is on.
pub fn effective_rho(config: &TrainConfig, rosetta_len: usize) -> f64 {
    if config.rosetta_weighting {
        config.rho * rosetta_len as f64 / config.batch_size as f64
    } else {
        config.rho
    }
}

/// ELBO loss plus `ρ_eff · Σ_r [‖x̂_r − m(ẑ_r)‖² + ‖ẑ_r − μ(x̂_r)‖²]`.
///
/// With `ρ = 0` the graph is exactly the one built by [`elbo_loss`].
pub fn rosetta_loss<'p>(
    model: &'p ModelState,
    batch: &Matrix,
    noise: &Matrix,
    rosetta: Option<&RosettaSet>,
    config: &TrainConfig,
) -> Result<LossGraph<'p>, VaeError> {
    let mut tape = Tape::new(&model.params);
    let (elbo, reconstruction, kl) = record_elbo(model, &mut tape, batch, config.beta, noise)?;
    let mut graph = LossGraph {
        tape,
        loss: elbo,
        reconstruction,
        kl,
        penalty: 0.0,
        penalty_weight: 0.0,
    };
    if config.rho != 0.0 {
        let rs = rosetta.filter(|r| !r.is_empty()).ok_or(VaeError::MissingRosetta)?;
        if rs.input_dim() != model.input_dim() || rs.latent_dim() != model.latent_dim() {
            return Err(VaeError::DimMismatch {
                what: "rosetta set",
                expected: model.input_dim(),
                got: rs.input_dim(),
            });
        }
        let tape = &mut graph.tape;
        let x_hat = tape.constant(rs.inputs.clone());
        let z_hat = tape.constant(rs.latents.clone());
        // decoder term ‖x̂ − m(ẑ)‖²
        let recon = model.nets.decoder.forward_tape(tape, z_hat)?;
        let dx = tape.sub(x_hat, recon)?;
        let dx_sq = tape.row_squared_norm(dx);
        // encoder term ‖ẑ − μ(x̂)‖², posterior mean only
        let h = trunk(model, tape, x_hat)?;
        let mu = model.nets.mu.forward_tape(tape, h)?;
        let dz = tape.sub(z_hat, mu)?;
        let dz_sq = tape.row_squared_norm(dz);
        let per_point = tape.add(dx_sq, dz_sq)?;
        let penalty = tape.sum(per_point);
        let weight = effective_rho(config, rs.len());
        let weighted = tape.scale(penalty, weight);
        graph.penalty = tape.scalar(penalty);
        graph.penalty_weight = weight;
        graph.loss = tape.add(elbo, weighted)?;
    }
    if !graph.value().is_finite() {
        return Err(VaeError::NonFinite("loss"));
    }
    Ok(graph)
}

/// Unweighted Rosetta penalty of `model`, evaluated without a tape.
pub fn rosetta_penalty(model: &ModelState, rosetta: &RosettaSet) -> Result<f64, VaeError> {
    let recon = model.decode_batch(&rosetta.latents)?;
    let mu = model.encode_means(&rosetta.inputs)?;
    let a: f64 = recon.sub(&rosetta.inputs)?.as_slice().iter().map(|v| v * v).sum();
    let b: f64 = mu.sub(&rosetta.latents)?.as_slice().iter().map(|v| v * v).sum();
    Ok(a + b)
}
