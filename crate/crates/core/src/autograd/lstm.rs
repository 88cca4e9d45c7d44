use super::{AutogradError, Tape, Var};

/// One LSTM step built from tape primitives.
///
/// `weight` is `[input + hidden, 4 * hidden]` and `bias` is `[4 * hidden]`,
/// with gate blocks laid out as input, forget, candidate, output.
pub fn lstm_cell(
    tape: &mut Tape<'_>,
    x: Var,
    h_prev: Var,
    c_prev: Var,
    weight: Var,
    bias: Var,
) -> Result<(Var, Var), AutogradError> {
    let hidden = tape.value(h_prev).len();
    let c_len = tape.value(c_prev).len();
    let w_shape = tape.value(weight).shape().to_vec();
    let in_len = tape.value(x).len();
    if c_len != hidden || w_shape != [in_len + hidden, 4 * hidden] {
        return Err(AutogradError::ShapeMismatch {
            op: "lstm_cell",
            left: vec![in_len, hidden, c_len],
            right: w_shape,
        });
    }
    let xh = tape.concat(&[x, h_prev])?;
    let gates = tape.affine(xh, weight, Some(bias))?;
    let i_pre = tape.slice(gates, 0, hidden)?;
    let f_pre = tape.slice(gates, hidden, hidden)?;
    let g_pre = tape.slice(gates, 2 * hidden, hidden)?;
    let o_pre = tape.slice(gates, 3 * hidden, hidden)?;
    let i = tape.sigmoid(i_pre);
    let f = tape.sigmoid(f_pre);
    let g = tape.tanh(g_pre);
    let o = tape.sigmoid(o_pre);
    let kept = tape.mul(f, c_prev)?;
    let written = tape.mul(i, g)?;
    let c = tape.add(kept, written)?;
    let c_act = tape.tanh(c);
    let h = tape.mul(o, c_act)?;
    Ok((h, c))
}
