use crate::error::{Error, Result};
use crate::morphnas::search::MorphKind;
use crate::nn::{MlpModel, SkipEdge};

/// Widens hidden representation `layer` to `new_width` by neuron replication
/// with outgoing-weight splitting. Function-preserving: replicated units copy
/// their source's incoming row, and every outgoing column is divided by its
/// replication count.
pub fn widen(model: &MlpModel, layer: usize, new_width: usize) -> Result<MlpModel> {
    let depth = model.depth();
    if layer == 0 || layer >= depth {
        return Err(Error::domain(format!(
            "widen targets hidden representations 1..{depth}, got {layer}"
        )));
    }
    let old_width = model.widths()[layer];
    if new_width <= old_width {
        return Err(Error::domain(format!(
            "widen must increase width ({old_width} -> {new_width})"
        )));
    }

    // Replica j >= old_width copies unit (j - old_width) % old_width.
    let source = |j: usize| if j < old_width { j } else { (j - old_width) % old_width };
    let mut count = vec![1usize; old_width];
    for j in old_width..new_width {
        count[source(j)] += 1;
    }

    let mut widths = model.widths().to_vec();
    widths[layer] = new_width;
    let mut layers = model.layers().to_vec();

    // Incoming layer: copy rows and biases.
    {
        let incoming = &mut layers[layer - 1];
        let in_w = incoming.in_width;
        let mut weights = vec![0.0; new_width * in_w];
        let mut bias = vec![0.0; new_width];
        for j in 0..new_width {
            let o = source(j);
            weights[j * in_w..(j + 1) * in_w]
                .copy_from_slice(&incoming.weights[o * in_w..(o + 1) * in_w]);
            bias[j] = incoming.bias[o];
        }
        incoming.weights = weights;
        incoming.bias = bias;
        incoming.out_width = new_width;
    }

    // Outgoing layer: copy columns, split by replication count.
    {
        let outgoing = &mut layers[layer];
        let out_w = outgoing.out_width;
        let mut weights = vec![0.0; out_w * new_width];
        for o in 0..out_w {
            for j in 0..new_width {
                let s = source(j);
                weights[o * new_width + j] =
                    outgoing.weights[o * old_width + s] / count[s] as f64;
            }
        }
        outgoing.weights = weights;
        outgoing.in_width = new_width;
    }

    // Skip projections touching the widened representation.
    let mut skips = model.skips().to_vec();
    for skip in &mut skips {
        if skip.src == layer {
            let out_w = widths[skip.dst];
            let mut weights = vec![0.0; out_w * new_width];
            for o in 0..out_w {
                for j in 0..new_width {
                    let s = source(j);
                    weights[o * new_width + j] =
                        skip.weights[o * old_width + s] / count[s] as f64;
                }
            }
            skip.weights = weights;
        } else if skip.dst == layer {
            let in_w = widths[skip.src];
            let mut weights = vec![0.0; new_width * in_w];
            for j in 0..new_width {
                let s = source(j);
                weights[j * in_w..(j + 1) * in_w]
                    .copy_from_slice(&skip.weights[s * in_w..(s + 1) * in_w]);
            }
            skip.weights = weights;
        }
    }

    let out = MlpModel::from_parts(widths, layers, skips);
    out.validate().map_err(|e| Error::domain(e.to_string()))?;
    Ok(out)
}

/// Inserts an identity-initialized rectifier layer after hidden
/// representation `position`. Post-activation inputs are non-negative there,
/// so the identity map is exact and the network function is unchanged.
pub fn deepen(model: &MlpModel, position: usize) -> Result<MlpModel> {
    let depth = model.depth();
    if position == 0 || position >= depth {
        return Err(Error::domain(format!(
            "deepen inserts after hidden representations 1..{depth}, got {position}"
        )));
    }
    let w = model.widths()[position];

    let mut widths = model.widths().to_vec();
    widths.insert(position + 1, w);

    let mut identity = crate::nn::DenseLayer {
        in_width: w,
        out_width: w,
        weights: vec![0.0; w * w],
        bias: vec![0.0; w],
        activation: crate::nn::Activation::Relu,
    };
    for i in 0..w {
        identity.weights[i * w + i] = 1.0;
    }
    let mut layers = model.layers().to_vec();
    layers.insert(position, identity);

    // Representations past the insertion point shift by one.
    let mut skips = model.skips().to_vec();
    for skip in &mut skips {
        if skip.src > position {
            skip.src += 1;
        }
        if skip.dst > position {
            skip.dst += 1;
        }
    }

    let out = MlpModel::from_parts(widths, layers, skips);
    out.validate().map_err(|e| Error::domain(e.to_string()))?;
    Ok(out)
}

/// Adds a zero-initialized additive skip projection from representation
/// `src` to representation `dst`, leaving the network function unchanged.
pub fn add_skip(model: &MlpModel, src: usize, dst: usize) -> Result<MlpModel> {
    let depth = model.depth();
    if src >= dst {
        return Err(Error::domain(format!(
            "skip edges are forward-only, got {src}->{dst}"
        )));
    }
    if dst > depth {
        return Err(Error::domain(format!(
            "skip destination {dst} exceeds network depth {depth}"
        )));
    }
    if model.skips().iter().any(|s| s.src == src && s.dst == dst) {
        return Err(Error::domain(format!("duplicate skip edge {src}->{dst}")));
    }

    let widths = model.widths().to_vec();
    let mut skips = model.skips().to_vec();
    skips.push(SkipEdge {
        src,
        dst,
        weights: vec![0.0; widths[dst] * widths[src]],
    });
    let out = MlpModel::from_parts(widths, model.layers().to_vec(), skips);
    out.validate().map_err(|e| Error::domain(e.to_string()))?;
    Ok(out)
}

/// Applies a drawn morphism description to a model.
pub fn apply_morph(model: &MlpModel, kind: &MorphKind) -> Result<MlpModel> {
    match kind {
        MorphKind::Widen { layer, new_width } => widen(model, *layer, *new_width),
        MorphKind::Deepen { position } => deepen(model, *position),
        MorphKind::AddSkip { src, dst } => add_skip(model, *src, *dst),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn probes(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect()
    }

    fn max_deviation(a: &MlpModel, b: &MlpModel, probes: &[Vec<f64>]) -> f64 {
        probes
            .iter()
            .map(|x| {
                a.forward(x)
                    .unwrap()
                    .as_slice()
                    .iter()
                    .zip(b.forward(x).unwrap().as_slice())
                    .map(|(p, q)| (p - q).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn widen_preserves_function_and_grows_params() {
        let model = MlpModel::seeded(&[3, 4, 4, 2], 5).unwrap();
        let wide = widen(&model, 1, 6).unwrap();
        assert!(wide.param_count() > model.param_count());
        assert!(max_deviation(&model, &wide, &probes(50, 3, 1)) < 1e-6);
        let wider = widen(&wide, 1, 9).unwrap();
        assert!(max_deviation(&model, &wider, &probes(50, 3, 2)) < 1e-6);
    }

    #[test]
    fn widen_rejects_bad_targets() {
        let model = MlpModel::seeded(&[3, 4, 2], 0).unwrap();
        assert!(widen(&model, 0, 6).is_err());
        assert!(widen(&model, 2, 6).is_err());
        assert!(widen(&model, 1, 4).is_err());
        assert!(widen(&model, 1, 3).is_err());
    }

    #[test]
    fn deepen_preserves_function_and_adds_depth() {
        let model = MlpModel::seeded(&[3, 5, 2], 7).unwrap();
        let deep = deepen(&model, 1).unwrap();
        assert_eq!(deep.depth(), model.depth() + 1);
        assert!(max_deviation(&model, &deep, &probes(50, 3, 3)) < 1e-6);
        let deeper = deepen(&deep, 1).unwrap();
        assert_eq!(deeper.depth(), model.depth() + 2);
        assert!(max_deviation(&model, &deeper, &probes(50, 3, 4)) < 1e-6);
    }

    #[test]
    fn deepen_rejects_input_and_output_positions() {
        let model = MlpModel::seeded(&[3, 5, 2], 7).unwrap();
        assert!(deepen(&model, 0).is_err());
        assert!(deepen(&model, 2).is_err());
    }

    #[test]
    fn add_skip_is_zero_initialized_and_unique() {
        let model = MlpModel::seeded(&[3, 4, 4, 2], 9).unwrap();
        let skipped = add_skip(&model, 0, 2).unwrap();
        assert_eq!(skipped.skips().len(), 1);
        assert!(max_deviation(&model, &skipped, &probes(50, 3, 5)) < 1e-12);
        assert!(add_skip(&skipped, 0, 2).is_err());
        assert!(add_skip(&model, 2, 1).is_err());
        assert!(add_skip(&model, 1, 9).is_err());
    }

    #[test]
    fn morphs_preserve_function_after_skips_exist() {
        // Widen and deepen must reindex or resize live skip projections.
        let model = MlpModel::seeded(&[3, 4, 4, 4, 2], 11).unwrap();
        let mut m = add_skip(&model, 1, 3).unwrap();
        // Give the skip nonzero weight so mishandling it would show.
        let mut flat = m.flatten_params();
        let n = flat.len();
        for v in flat.iter_mut().skip(n - 16) {
            *v = 0.25;
        }
        m.assign_params(&flat).unwrap();
        let baseline = m.clone();

        let widened = widen(&m, 1, 7).unwrap();
        assert!(max_deviation(&baseline, &widened, &probes(50, 3, 6)) < 1e-6);
        let widened_dst = widen(&m, 3, 6).unwrap();
        assert!(max_deviation(&baseline, &widened_dst, &probes(50, 3, 7)) < 1e-6);
        let deepened = deepen(&m, 2).unwrap();
        assert!(max_deviation(&baseline, &deepened, &probes(50, 3, 8)) < 1e-6);
    }
}
