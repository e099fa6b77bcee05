//! Evaluates the Frobenius distance of a few correcting unitaries by the
//! three available routes. `Unitary2::rotation(θ, n)` turns the Bloch
//! sphere by `2θ`.

use pulselab::metrics::{frobenius_shortcut, frobenius_trace_formula};
use pulselab::{frobenius_from_unitary, Unitary2};

fn main() -> pulselab::Result<()> {
    for (label, theta, axis) in [
        ("identity", 0.0, [1.0, 0.0, 0.0]),
        ("x by 2e-6", 1e-6, [1.0, 0.0, 0.0]),
        ("y by 0.6", 0.3, [0.0, 1.0, 0.0]),
        ("z by π", std::f64::consts::FRAC_PI_2, [0.0, 0.0, 1.0]),
    ] {
        let u = Unitary2::rotation(theta, axis);
        let f = frobenius_from_unitary(&u)?;
        println!(
            "{label:<16} partials {:.3e} {:.3e} {:.3e}  Δ_F² {:.6e}  trace formula {:.6e}  shortcut {:.6e}",
            f.partials[0],
            f.partials[1],
            f.partials[2],
            f.delta_f_squared,
            frobenius_trace_formula(&u),
            frobenius_shortcut(&u)
        );
    }
    Ok(())
}
