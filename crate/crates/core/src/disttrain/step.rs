//! The per-channel training step, shared verbatim by the reference trainer
//! and the distributed worker so the two modes are numerically identical.
//!
//! A step has two halves. The forward half runs masked encode/decode for
//! every record in the batch, builds the weighted reconstruction loss, and
//! surfaces the batch's class-token embeddings. The completion half folds in
//! the alignment gradient for those embeddings (computed locally by the
//! reference trainer, or received from the coordinator by a worker), runs
//! the backward sweep, and applies one AdamW update.

use crate::datapipe::PreparedRecord;
use crate::mae1d::{bind, decode, encode, patchify, random_mask, Mae1dModel};
use crate::numcore::{adamw_update_param, AdamWState, Graph, NodeId, NumError, Tensor};
use crate::objectives::{masked_reconstruction_loss_graph, reconstruction_loss_graph};

use super::config::TrainConfig;
use super::seeds::mask_seed;
use super::TrainError;

/// In-flight state of one channel's step: the graph is alive, gradients are
/// not yet computed.
pub struct ChannelStep {
    graph: Graph,
    param_ids: Vec<NodeId>,
    cls_rows: NodeId,
    weighted_loss: NodeId,
    /// Unweighted mean reconstruction loss over the batch.
    pub rec_loss: f64,
    /// `[B, enc_dim]` class-token embeddings (masked forward), the matrix
    /// shipped to the coordinator.
    pub embeddings: Tensor,
}

/// Forward half of one step for `channel`.
pub fn channel_forward(
    cfg: &TrainConfig,
    model: &Mae1dModel,
    batch: &[PreparedRecord],
    channel: usize,
    epoch: u32,
    step_in_epoch: u64,
    w_rec: f64,
) -> Result<ChannelStep, TrainError> {
    let mut graph = Graph::new();
    let bound = bind(&mut graph, model, true);
    let param_ids = bound.param_ids();
    let num_patches = model.config.num_patches();

    let mut cls_nodes = Vec::with_capacity(batch.len());
    let mut loss_sum: Option<NodeId> = None;
    for (slot, prepared) in batch.iter().enumerate() {
        let signal = prepared.channels.get(channel).ok_or_else(|| {
            TrainError::Config(format!(
                "record {} has {} channels, worker handles channel {channel}",
                prepared.id,
                prepared.channels.len()
            ))
        })?;
        let plan = random_mask(
            num_patches,
            model.config.mask_ratio,
            mask_seed(cfg.master_seed, epoch, step_in_epoch, channel, slot),
        )?;
        let enc = encode(&mut graph, &bound, signal, Some(plan))?;
        cls_nodes.push(graph.gather_rows(enc.tokens, &[0])?);
        let masked_idx = enc.plan.masked_idx().to_vec();
        let pred = decode(&mut graph, &bound, &enc)?;
        let target = graph.constant(&patchify(signal, model.config.patch_len)?);
        let loss = if cfg.masked_loss_only {
            masked_reconstruction_loss_graph(&mut graph, pred, target, &masked_idx)?
        } else {
            reconstruction_loss_graph(&mut graph, pred, target)?
        };
        loss_sum = Some(match loss_sum {
            Some(acc) => graph.add(acc, loss)?,
            None => loss,
        });
    }
    let rec_loss_node = graph.scale(loss_sum.expect("non-empty batch"), 1.0 / batch.len() as f64)?;
    let weighted_loss = graph.scale(rec_loss_node, w_rec)?;
    let cls_rows = graph.concat_rows(&cls_nodes)?;

    let rec_loss = graph.scalar_value(rec_loss_node);
    let embeddings = Tensor::new(
        vec![batch.len(), model.config.enc_dim],
        graph.value(cls_rows).to_vec(),
    )?;
    Ok(ChannelStep { graph, param_ids, cls_rows, weighted_loss, rec_loss, embeddings })
}

/// Completion half: inject the alignment gradient (if any) at the embedding
/// node, run backward, harvest parameter gradients, and take one AdamW step.
/// Consumes the step, freeing its graph.
pub fn channel_complete(
    model: &mut Mae1dModel,
    opt: &mut AdamWState,
    step: ChannelStep,
    align_grad: Option<&Tensor>,
    lr: f64,
) -> Result<(), TrainError> {
    let ChannelStep { mut graph, param_ids, cls_rows, weighted_loss, .. } = step;
    match align_grad {
        Some(grad) => {
            graph.backward_with_injected(weighted_loss, &[(cls_rows, grad.data())])?;
        }
        None => graph.backward(weighted_loss)?,
    }

    // Harvest gradients into the parameters in canonical order, then update.
    let mut idx = 0;
    let mut first_err: Option<NumError> = None;
    model.params.for_each_named_mut(&mut |_, param| {
        if first_err.is_some() {
            return;
        }
        let grad = graph.grad(param_ids[idx]).expect("backward filled all gradients");
        if let Err(e) = param.set_grad(grad) {
            first_err = Some(e);
        }
        idx += 1;
    });
    if let Some(e) = first_err {
        return Err(e.into());
    }
    drop(graph);

    let correction = opt.begin_step();
    let mut idx = 0;
    let mut first_err: Option<NumError> = None;
    let (beta1, beta2, epsilon, weight_decay) = (opt.beta1, opt.beta2, opt.epsilon, opt.weight_decay);
    let (first_moment, second_moment) = (&mut opt.first_moment, &mut opt.second_moment);
    model.params.for_each_named_mut(&mut |_, param| {
        if first_err.is_some() {
            return;
        }
        if let Err(e) = adamw_update_param(
            param,
            &mut first_moment[idx],
            &mut second_moment[idx],
            beta1,
            beta2,
            epsilon,
            weight_decay,
            correction,
            lr,
        ) {
            first_err = Some(e);
        }
        idx += 1;
    });
    if let Some(e) = first_err {
        return Err(e.into());
    }
    Ok(())
}

/// Fresh optimizer state shaped like the model's parameters, with the
/// config's constants.
pub fn optimizer_for(cfg: &TrainConfig, model: &Mae1dModel) -> AdamWState {
    let named = model.named_params();
    let refs: Vec<&Tensor> = named.iter().map(|(_, t)| t).collect();
    AdamWState::with_constants(&refs, cfg.beta1, cfg.beta2, cfg.epsilon, cfg.weight_decay)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datapipe::{batch_iter, synth_generate, SyntheticHeartConfig};
    use crate::disttrain::seeds::epoch_seed;

    fn fixture() -> (TrainConfig, Vec<PreparedRecord>, Mae1dModel) {
        let cfg = TrainConfig::tiny(3, 2, 4, 11);
        let records = synth_generate(&SyntheticHeartConfig {
            n_subjects: 4,
            records_per_subject: 1,
            channels: 3,
            noise_std: 0.01,
            fs_hz: 50.0,
            duration_s: 2.0,
            ..Default::default()
        })
        .unwrap();
        let batches = batch_iter(&records, 4, &cfg.preprocess, epoch_seed(cfg.master_seed, 0)).unwrap();
        let model = Mae1dModel::init(&cfg.model, 5).unwrap();
        (cfg, batches[0].clone(), model)
    }

    #[test]
    fn forward_produces_batch_embeddings_and_finite_loss() {
        let (cfg, batch, model) = fixture();
        let step = channel_forward(&cfg, &model, &batch, 1, 0, 0, 1.0).unwrap();
        assert_eq!(step.embeddings.shape(), &[4, 32]);
        assert!(step.rec_loss.is_finite() && step.rec_loss > 0.0);
    }

    #[test]
    fn injected_zero_gradient_matches_no_injection() {
        let (cfg, batch, model) = fixture();
        let zeros = Tensor::zeros(vec![4, 32]);

        let mut model_a = model.clone();
        let mut opt_a = optimizer_for(&cfg, &model_a);
        let step = channel_forward(&cfg, &model_a, &batch, 0, 0, 0, 1.0).unwrap();
        channel_complete(&mut model_a, &mut opt_a, step, Some(&zeros), 1e-3).unwrap();

        let mut model_b = model.clone();
        let mut opt_b = optimizer_for(&cfg, &model_b);
        let step = channel_forward(&cfg, &model_b, &batch, 0, 0, 0, 1.0).unwrap();
        channel_complete(&mut model_b, &mut opt_b, step, None, 1e-3).unwrap();

        let mut va = Vec::new();
        let mut vb = Vec::new();
        model_a.params.for_each_named(&mut |_, t| va.extend_from_slice(t.data()));
        model_b.params.for_each_named(&mut |_, t| vb.extend_from_slice(t.data()));
        assert_eq!(va, vb);
    }

    #[test]
    fn injection_route_equals_joint_graph_gradient() {
        // The trainer computes alignment gradients in a separate graph and
        // injects them at the embedding node. That must equal differentiating
        // one joint graph of w_rec * rec + w_align * align.
        use crate::mae1d::{bind, decode, encode, patchify, random_mask};
        use crate::objectives::{
            alignment_loss_and_grads, assign_triplets, reconstruction_loss_graph,
            triplet_loss_graph,
        };

        let (cfg, batch, _) = fixture();
        let (w_align, w_rec) = (0.6, 0.8);
        let models: Vec<Mae1dModel> =
            (0..2).map(|c| Mae1dModel::init(&cfg.model, 50 + c as u64).unwrap()).collect();
        let ids: Vec<&str> = batch.iter().map(|p| p.id.as_str()).collect();
        let assignment = assign_triplets(&ids, 2, 1.0, 77).unwrap();

        // Route A: joint graph.
        let mut joint = Graph::new();
        let bounds: Vec<_> = models.iter().map(|m| bind(&mut joint, m, true)).collect();
        let mut rec_sum = None;
        let mut cls_per_channel = Vec::new();
        for (channel, bound) in bounds.iter().enumerate() {
            let mut cls_rows = Vec::new();
            for (slot, prepared) in batch.iter().enumerate() {
                let signal = &prepared.channels[channel];
                let plan = random_mask(
                    cfg.model.num_patches(),
                    cfg.model.mask_ratio,
                    mask_seed(cfg.master_seed, 0, 0, channel, slot),
                )
                .unwrap();
                let enc = encode(&mut joint, bound, signal, Some(plan)).unwrap();
                cls_rows.push(joint.gather_rows(enc.tokens, &[0]).unwrap());
                let pred = decode(&mut joint, bound, &enc).unwrap();
                let target = joint.constant(&patchify(signal, cfg.model.patch_len).unwrap());
                let loss = reconstruction_loss_graph(&mut joint, pred, target).unwrap();
                rec_sum = Some(match rec_sum {
                    Some(acc) => joint.add(acc, loss).unwrap(),
                    None => loss,
                });
            }
            cls_per_channel.push(joint.concat_rows(&cls_rows).unwrap());
        }
        // Per-channel mean MSE, averaged over channels = mean over all.
        let rec = joint.scale(rec_sum.unwrap(), 1.0 / (2.0 * batch.len() as f64)).unwrap();
        let stacked = joint.concat_rows(&cls_per_channel).unwrap();
        let anchors = joint.gather_rows(stacked, &assignment.anchors).unwrap();
        let positives = joint.gather_rows(stacked, &assignment.positives).unwrap();
        let negatives = joint.gather_rows(stacked, &assignment.negatives).unwrap();
        let align =
            triplet_loss_graph(&mut joint, anchors, positives, negatives, assignment.margin)
                .unwrap();
        let weighted_rec = joint.scale(rec, w_rec).unwrap();
        let weighted_align = joint.scale(align, w_align).unwrap();
        let total = joint.add(weighted_rec, weighted_align).unwrap();
        joint.backward(total).unwrap();
        let joint_grads: Vec<Vec<f64>> = bounds
            .iter()
            .map(|b| {
                b.param_ids()
                    .iter()
                    .flat_map(|&id| joint.grad(id).unwrap().to_vec())
                    .collect()
            })
            .collect();

        // Route B: per-channel graphs with injected alignment gradients,
        // exactly as the trainer does it. The per-channel weighted loss uses
        // its own mean MSE, so scale by 1/channels to match the joint rec.
        let steps: Vec<ChannelStep> = (0..2)
            .map(|channel| {
                channel_forward(&cfg, &models[channel], &batch, channel, 0, 0, w_rec / 2.0).unwrap()
            })
            .collect();
        let embeddings: Vec<Tensor> = steps.iter().map(|s| s.embeddings.clone()).collect();
        let result = alignment_loss_and_grads(&embeddings, &assignment, w_align).unwrap();
        for (channel, step) in steps.into_iter().enumerate() {
            let ChannelStep { mut graph, param_ids, cls_rows, weighted_loss, .. } = step;
            graph
                .backward_with_injected(weighted_loss, &[(cls_rows, result.grads[channel].data())])
                .unwrap();
            let injected: Vec<f64> =
                param_ids.iter().flat_map(|&id| graph.grad(id).unwrap().to_vec()).collect();
            let worst = injected
                .iter()
                .zip(joint_grads[channel].iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            assert!(worst < 1e-12, "channel {channel}: max grad delta {worst}");
        }
    }

    #[test]
    fn update_changes_parameters_deterministically() {
        let (cfg, batch, model) = fixture();
        let run = || {
            let mut m = model.clone();
            let mut opt = optimizer_for(&cfg, &m);
            let step = channel_forward(&cfg, &m, &batch, 2, 0, 0, 0.8).unwrap();
            channel_complete(&mut m, &mut opt, step, None, 1e-3).unwrap();
            let mut v = Vec::new();
            m.params.for_each_named(&mut |_, t| v.extend_from_slice(t.data()));
            v
        };
        let (a, b) = (run(), run());
        assert_eq!(a, b);
        let mut orig = Vec::new();
        model.params.for_each_named(&mut |_, t| orig.extend_from_slice(t.data()));
        assert_ne!(a, orig, "one step must move the parameters");
    }
}
