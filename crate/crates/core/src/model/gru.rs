use crate::diffcore::{Init, ParamId, ParamSpec, ParamStore, Tape, TapeError, Var};

/// Parameters of one GRU cell, stored under `<prefix>.{w,u,b}_{z,r,h}`.
#[derive(Debug, Clone, Copy)]
pub struct GruParams {
    w_z: ParamId,
    u_z: ParamId,
    b_z: ParamId,
    w_r: ParamId,
    u_r: ParamId,
    b_r: ParamId,
    w_h: ParamId,
    u_h: ParamId,
    b_h: ParamId,
}

const GATES: [&str; 3] = ["z", "r", "h"];

impl GruParams {
    pub fn specs(prefix: &str, input: usize, hidden: usize) -> Vec<ParamSpec> {
        let mut out = Vec::with_capacity(9);
        for g in GATES {
            out.push(ParamSpec::new(
                format!("{prefix}.w_{g}"),
                hidden,
                input,
                Init::Xavier {
                    fan_in: input,
                    fan_out: hidden,
                },
            ));
            out.push(ParamSpec::new(
                format!("{prefix}.u_{g}"),
                hidden,
                hidden,
                Init::Xavier {
                    fan_in: hidden,
                    fan_out: hidden,
                },
            ));
            out.push(ParamSpec::new(format!("{prefix}.b_{g}"), 1, hidden, Init::Zero));
        }
        out
    }

    pub fn bind(store: &ParamStore, prefix: &str) -> Result<Self, TapeError> {
        let id = |name: &str| store.id(&format!("{prefix}.{name}"));
        Ok(GruParams {
            w_z: id("w_z")?,
            u_z: id("u_z")?,
            b_z: id("b_z")?,
            w_r: id("w_r")?,
            u_r: id("u_r")?,
            b_r: id("b_r")?,
            w_h: id("w_h")?,
            u_h: id("u_h")?,
            b_h: id("b_h")?,
        })
    }

    fn affine(&self, tape: &mut Tape<'_>, w: ParamId, u: ParamId, b: ParamId, x: Var, h: Var) -> Result<Var, TapeError> {
        let wx = tape.matvec(w, x)?;
        let uh = tape.matvec(u, h)?;
        let bias = tape.param_row(b, 0)?;
        tape.sum(&[wx, uh, bias])
    }

    /// One step:
    /// `z = σ(W_z x + U_z h + b_z)`, `r = σ(W_r x + U_r h + b_r)`,
    /// `h̃ = tanh(W_h x + U_h (r ⊙ h) + b_h)`, `h' = (1 − z) ⊙ h + z ⊙ h̃`.
    pub fn step(&self, tape: &mut Tape<'_>, x: Var, h: Var) -> Result<Var, TapeError> {
        let z_pre = self.affine(tape, self.w_z, self.u_z, self.b_z, x, h)?;
        let z = tape.sigmoid(z_pre);
        let r_pre = self.affine(tape, self.w_r, self.u_r, self.b_r, x, h)?;
        let r = tape.sigmoid(r_pre);
        let rh = tape.hadamard(r, h)?;
        let cand_pre = self.affine(tape, self.w_h, self.u_h, self.b_h, x, rh)?;
        let cand = tape.tanh(cand_pre);
        // (1 − z) ⊙ h + z ⊙ h̃ = h + z ⊙ (h̃ − h)
        let delta = tape.sub(cand, h)?;
        let gated = tape.hadamard(z, delta)?;
        tape.add(h, gated)
    }
}
