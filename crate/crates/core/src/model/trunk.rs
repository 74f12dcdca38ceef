//! Shared convolutional trunk: three conv3x3 -> ReLU -> maxpool2 blocks with
//! channel widths (w, m, m), then a dense head. `m` is normally 2w.

use ndgrad::{Real, Tape, Var};

use crate::error::Result;
use crate::model::ParamSpec;

/// Parameters per trunk, in binding order.
pub const TRUNK_PARAMS: usize = 8;

pub(crate) fn layout(
    prefix: &str,
    input: [usize; 3],
    width: usize,
    mid: usize,
    outputs: usize,
) -> Vec<ParamSpec> {
    let [h, w, c] = input;
    let flat = (h / 8) * (w / 8) * mid;
    let conv = |name: &str, cin: usize, cout: usize| {
        [
            ParamSpec::weight(format!("{prefix}{name}.w"), vec![3, 3, cin, cout], 9 * cin),
            ParamSpec::bias(format!("{prefix}{name}.b"), cout),
        ]
    };
    let mut out = Vec::with_capacity(TRUNK_PARAMS);
    out.extend(conv("conv1", c, width));
    out.extend(conv("conv2", width, mid));
    out.extend(conv("conv3", mid, mid));
    out.push(ParamSpec::weight(
        format!("{prefix}fc.w"),
        vec![flat, outputs],
        flat,
    ));
    out.push(ParamSpec::bias(format!("{prefix}fc.b"), outputs));
    out
}

fn block<T: Real>(tape: &mut Tape<T>, x: Var, w: Var, b: Var) -> Result<Var> {
    let h = tape.conv2d(x, w, 1, 1)?;
    let h = tape.add(h, b)?;
    let h = tape.relu(h)?;
    Ok(tape.max_pool2d(h, 2, 2)?)
}

/// Dense head on a pooled `[B, h, w, c]` feature map.
fn head<T: Real>(tape: &mut Tape<T>, h: Var, w: Var, b: Var) -> Result<Var> {
    let shape = tape.shape(h)?.to_vec();
    let flat = tape.reshape(h, &[shape[0], shape[1..].iter().product()])?;
    let z = tape.matmul(flat, w)?;
    Ok(tape.add(z, b)?)
}

/// Full trunk on `[B, H, W, C]` input; `p` holds the eight trunk variables.
pub(crate) fn forward<T: Real>(tape: &mut Tape<T>, p: &[Var], x: Var) -> Result<Var> {
    let h = block(tape, x, p[0], p[1])?;
    tail(tape, p, h)
}

/// Trunk after the first block, for callers that run the first block fused.
pub(crate) fn tail<T: Real>(tape: &mut Tape<T>, p: &[Var], h: Var) -> Result<Var> {
    let h = block(tape, h, p[2], p[3])?;
    let h = block(tape, h, p[4], p[5])?;
    head(tape, h, p[6], p[7])
}

/// First block for several trunks at once: their conv1 kernels are stacked
/// along the output-channel axis so the input is unfolded only once.
pub(crate) fn fused_first_blocks<T: Real>(
    tape: &mut Tape<T>,
    trunks: &[&[Var]],
    x: Var,
) -> Result<Vec<Var>> {
    let ws: Vec<Var> = trunks.iter().map(|p| p[0]).collect();
    let bs: Vec<Var> = trunks.iter().map(|p| p[1]).collect();
    let w = tape.concat(&ws, 3)?;
    let b = tape.concat(&bs, 0)?;
    let h = block(tape, x, w, b)?;
    let mut out = Vec::with_capacity(trunks.len());
    let mut start = 0;
    for p in trunks {
        let width = tape.shape(p[0])?[3];
        out.push(tape.slice(h, 3, start, width)?);
        start += width;
    }
    Ok(out)
}
