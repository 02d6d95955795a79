//! Unimodal encoders: a bidirectional recurrent encoder over the two-token
//! concept `[attribute, object]`, and the linear visual projection.

use crate::data::ConceptPair;
use crate::error::{Error, Result};
use crate::model::{slot, Bound, ModelParams};
use crate::numerics::{Graph, NodeId, Tensor};

/// Node ids of one direction's LSTM weights.
#[derive(Debug, Clone, Copy)]
struct Cell {
    w_x: NodeId,
    w_h: NodeId,
    bias: NodeId,
    width: usize,
}

/// One LSTM step with gate order input, forget, candidate, output.
fn lstm_step(
    g: &mut Graph<'_>,
    cell: Cell,
    x: NodeId,
    state: Option<(NodeId, NodeId)>,
) -> Result<(NodeId, NodeId)> {
    let h = cell.width;
    let mut pre = g.matmul(x, cell.w_x)?;
    if let Some((h_prev, _)) = state {
        let rec = g.matmul(h_prev, cell.w_h)?;
        pre = g.add(pre, rec)?;
    }
    let pre = g.add_row(pre, cell.bias)?;
    let i = g.slice_cols(pre, 0, h)?;
    let i = g.sigmoid(i)?;
    let f = g.slice_cols(pre, h, h)?;
    let f = g.sigmoid(f)?;
    let cand = g.slice_cols(pre, 2 * h, h)?;
    let cand = g.tanh(cand)?;
    let o = g.slice_cols(pre, 3 * h, h)?;
    let o = g.sigmoid(o)?;
    let mut c = g.mul(i, cand)?;
    if let Some((_, c_prev)) = state {
        let keep = g.mul(f, c_prev)?;
        c = g.add(keep, c)?;
    }
    let squashed = g.tanh(c)?;
    let h_new = g.mul(o, squashed)?;
    Ok((h_new, c))
}

/// Encodes `[attr, obj]` as a `2 x dk` matrix: row `t` concatenates the
/// forward and backward hidden states at token `t`. Initial states are zero.
pub fn encode_concept(
    g: &mut Graph<'_>,
    bound: &Bound,
    params: &ModelParams,
    pair: &ConceptPair,
) -> Result<NodeId> {
    if pair.attr >= params.n_attrs() || pair.obj >= params.n_objs() {
        return Err(Error::shape(
            "encode_concept",
            format!("pair ({}, {}) outside embedding tables", pair.attr, pair.obj),
        ));
    }
    let x_attr = g.select_row(bound.get(slot::ATTR_EMB), pair.attr)?;
    let x_obj = g.select_row(bound.get(slot::OBJ_EMB), pair.obj)?;
    let width = params.config.cell_width();
    let fwd = Cell {
        w_x: bound.get(slot::FWD_WX),
        w_h: bound.get(slot::FWD_WH),
        bias: bound.get(slot::FWD_B),
        width,
    };
    let bwd = Cell {
        w_x: bound.get(slot::BWD_WX),
        w_h: bound.get(slot::BWD_WH),
        bias: bound.get(slot::BWD_B),
        width,
    };
    let f1 = lstm_step(g, fwd, x_attr, None)?;
    let f2 = lstm_step(g, fwd, x_obj, Some(f1))?;
    let b2 = lstm_step(g, bwd, x_obj, None)?;
    let b1 = lstm_step(g, bwd, x_attr, Some(b2))?;
    let attr_out = g.concat_cols(&[f1.0, b1.0])?;
    let obj_out = g.concat_cols(&[f2.0, b2.0])?;
    g.concat_rows(&[attr_out, obj_out])
}

/// `blocks x W` with no bias.
pub fn project_image(g: &mut Graph<'_>, bound: &Bound, blocks: NodeId) -> Result<NodeId> {
    g.matmul(blocks, bound.get(slot::VISUAL_PROJ))
}

/// Forward-only concept encoding.
pub fn concept_matrix(params: &ModelParams, pair: &ConceptPair) -> Result<Tensor> {
    let mut g = Graph::new();
    let bound = params.bind(&mut g);
    let out = encode_concept(&mut g, &bound, params, pair)?;
    Ok(g.value(out).clone())
}

/// Forward-only projection of an image's blocks into the joint space.
pub fn projected_blocks(params: &ModelParams, blocks: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new();
    let bound = params.bind(&mut g);
    let x = g.constant_ref(blocks);
    let out = project_image(&mut g, &bound, x)?;
    Ok(g.value(out).clone())
}
