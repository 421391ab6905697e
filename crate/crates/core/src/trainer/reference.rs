use super::{TrainConfig, DISTRIBUTOR_MARGIN, PURCHASER_MARGIN};
use crate::error::Result;
use crate::neural::{GnnArch, Mlp, PolicyParams};

fn set(values: &mut [f64], m: &Mlp, layer: usize, out: usize, input: usize, w: f64) {
    let (wo, _) = m.layer_offsets(layer);
    values[wo + out * m.dims[layer] + input] = w;
}

/// Parameters whose vertex score is a strictly increasing odd function of
/// the margin feature: messages are silenced and hidden unit 0 carries
/// `tanh(tanh(...margin))` through every layer to the policy head.
fn margin_chain(arch: GnnArch, margin: usize) -> PolicyParams {
    let mut p = PolicyParams::zeros(arch);
    let layout = p.layout();
    for (l, u) in layout.update.iter().enumerate() {
        let input = if l == 0 { margin } else { 0 };
        set(&mut p.values, u, 0, 0, input, 1.0);
        set(&mut p.values, u, 1, 0, 0, 1.0);
    }
    set(&mut p.values, &layout.policy, 0, 0, 0, 1.0);
    set(&mut p.values, &layout.policy, 1, 0, 0, 10.0);
    p
}

/// Hand-built distributor and purchaser parameters that, under argmax play,
/// order each target at its best-margin level (skipping losing targets)
/// and produce each line with its best-margin template.
pub fn margin_following_params(cfg: &TrainConfig) -> Result<(PolicyParams, PolicyParams)> {
    let (d, p) = cfg.archs();
    d.validate()?;
    p.validate()?;
    Ok((margin_chain(d, DISTRIBUTOR_MARGIN), margin_chain(p, PURCHASER_MARGIN)))
}
