//! Finite-difference checks of every differentiable path: separator loss,
//! the four acoustic-model structures and the joint chain.
//!
//! cargo run --release --example gradient_check -- [seed]

use mixenc::evalcli::{gradient_suite, GRADCHECK_TOLERANCE};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed = std::env::args().nth(1).map_or(Ok(0), |s| s.parse())?;
    let mut worst: f64 = 0.0;
    for e in gradient_suite(seed)? {
        let r = &e.report;
        println!(
            "{:<22} {:>5} coords  max rel. error {:.2e}  (worst {}[{}]: analytic {:.6e}, numeric {:.6e})",
            e.name, r.coords_checked, r.max_rel_error, r.worst_param, r.worst_index, r.analytic, r.numeric
        );
        worst = worst.max(r.max_rel_error);
    }
    println!("{}", if worst <= GRADCHECK_TOLERANCE { "all within tolerance" } else { "FAILED" });
    Ok(())
}
