use rand::Rng;

use super::{MultiHeadAttention, NnError, ParamId, ParamStore, Tape, Var};

/// Gate weights of the selective learn-forget unit.
///
/// `tanh_hidden == None` reuses `tanh_input` for the hidden-state term of the
/// tanh gate (the literal single-matrix reading).
#[derive(Clone, Debug)]
pub struct Slfn {
    pub sig_input: ParamId,
    pub sig_hidden: ParamId,
    pub tanh_input: ParamId,
    pub tanh_hidden: Option<ParamId>,
}

impl Slfn {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        width: usize,
        share_tanh_weights: bool,
        rng: &mut R,
    ) -> Self {
        Self {
            sig_input: store.add_glorot(format!("{name}.ws"), width, width, rng),
            sig_hidden: store.add_glorot(format!("{name}.us"), width, width, rng),
            tanh_input: store.add_glorot(format!("{name}.wt"), width, width, rng),
            tanh_hidden: (!share_tanh_weights).then(|| store.add_glorot(format!("{name}.ut"), width, width, rng)),
        }
    }

    fn tanh_hidden(&self) -> ParamId {
        self.tanh_hidden.unwrap_or(self.tanh_input)
    }

    /// Left-to-right scan over the rows of `x` with `H_0 = 0`; returns all `H_i`.
    pub fn scan(&self, tape: &mut Tape<'_>, x: Var) -> Var {
        let (len, _) = tape.dims(x);
        let ws = tape.param(self.sig_input);
        let wt = tape.param(self.tanh_input);
        let us = tape.param(self.sig_hidden);
        let ut = tape.param(self.tanh_hidden());
        let xs = tape.matmul(x, ws);
        let xt = tape.matmul(x, wt);
        let mut states = Vec::with_capacity(len);
        let mut prev: Option<Var> = None;
        for i in 0..len {
            let mut s = tape.row(xs, i);
            let mut t = tape.row(xt, i);
            if let Some(h) = prev {
                let hs = tape.matmul(h, us);
                let ht = tape.matmul(h, ut);
                s = tape.add(s, hs);
                t = tape.add(t, ht);
            }
            let h = gate(tape, s, t);
            states.push(h);
            prev = Some(h);
        }
        tape.stack_rows(&states)
    }
}

fn gate(tape: &mut Tape<'_>, s_pre: Var, t_pre: Var) -> Var {
    let sg = tape.sigmoid(s_pre);
    let tg = tape.tanh(t_pre);
    let prod = tape.mul(sg, tg);
    tape.add(sg, prod)
}

/// One SLFN step: `Sg = σ(X Ws + H Us)`, `Tg = tanh(X Wt + H Ut)`,
/// `H' = Sg + Sg ⊙ Tg`. `h_prev == None` stands for the zero initial state.
pub fn slfn_step(tape: &mut Tape<'_>, x: Var, h_prev: Option<Var>, ws: Var, us: Var, wt: Var, ut: Var) -> Var {
    let mut s = tape.matmul(x, ws);
    let mut t = tape.matmul(x, wt);
    if let Some(h) = h_prev {
        let hs = tape.matmul(h, us);
        let ht = tape.matmul(h, ut);
        s = tape.add(s, hs);
        t = tape.add(t, ht);
    }
    gate(tape, s, t)
}

/// Multi-head attention followed by an SLFN scan, plus a residual from the
/// block input: `out = Z + SLFN(MHA(Z))`.
#[derive(Clone, Debug)]
pub struct TslfnBlock {
    pub attention: MultiHeadAttention,
    pub slfn: Slfn,
}

impl TslfnBlock {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        width: usize,
        heads: usize,
        share_tanh_weights: bool,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        Ok(Self {
            attention: MultiHeadAttention::new(store, &format!("{name}.mha"), width, heads, rng)?,
            slfn: Slfn::new(store, &format!("{name}.slfn"), width, share_tanh_weights, rng),
        })
    }

    pub fn forward(&self, tape: &mut Tape<'_>, z: Var, valid: &[bool]) -> Result<Var, NnError> {
        let attended = self.attention.forward(tape, z, valid)?;
        let gated = self.slfn.scan(tape, attended);
        Ok(tape.add(z, gated))
    }
}
