//! Runs an experiment described by a config file and prints its summary.
//!
//! cargo run --release --example run_experiment -- <config> <out_dir>
//!
//! A minimal config:
//!
//! ```text
//! seed = 0
//! phases = sep_pretrain, am_train, joint
//!
//! [corpus]
//! n_train = 50
//! n_dev = 10
//! n_eval = 10
//!
//! [am]
//! variant = 6,4,1,1
//!
//! [phase.am_train]
//! epochs = 12
//! lr = 1e-3
//! l2 = 0
//! grad_noise_std = 0
//!
//! [phase.joint]
//! epochs = 2
//! ```

use mixenc::trainer::{load_experiment, run_experiment};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let [config, out] = args.as_slice() else {
        return Err("usage: run_experiment <config> <out_dir>".into());
    };
    let cfg = load_experiment(config.as_ref())?;
    let summary = run_experiment(&cfg, out.as_ref())?;
    for p in &summary.phases {
        println!(
            "{:<13} {:>3} epochs  dev loss {:9.4} -> {:9.4} (best epoch {})",
            p.phase, p.epochs, p.initial_dev_loss, p.final_dev_loss, p.best_epoch
        );
    }
    let show = |name: &str, v: Option<f64>| {
        if let Some(v) = v {
            println!("{name:<22} {v:.4}");
        }
    };
    show("untrained dev TER", summary.untrained_dev_token_error_rate);
    show("dev FER", summary.dev_frame_error_rate);
    show("dev TER", summary.dev_token_error_rate);
    show("eval FER", summary.eval_frame_error_rate);
    show("eval TER", summary.eval_token_error_rate);
    show("dev SDRi (dB)", summary.dev_sdr_improvement_db);
    println!("artifacts in {out}");
    Ok(())
}
