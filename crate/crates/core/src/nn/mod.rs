//! Minimal neural-network toolkit: autodiff tape, parameter stores and AdamW.

mod optim;
mod params;
mod tape;

pub use self::optim::{accumulate, AdamW};
pub use self::params::ParamStore;
pub use self::tape::{Gradients, ParamId, Tape, Var};

/// `x·W + b` on a tape.
pub fn linear(tape: &mut Tape<'_>, x: Var, w: Var, b: Option<Var>) -> Var {
    let y = tape.matmul(x, w);
    match b {
        Some(b) => tape.add_row(y, b),
        None => y,
    }
}
