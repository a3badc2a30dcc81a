//! Randomized check of the Pinsker chain and the logit-space JSD bound.
//!
//! Run with `cargo run --release --example verify_theory`.

use instab::theory::{check_logit_bound, verify_lemma_jsd, verify_pinsker_chain};

fn main() -> instab::Result<()> {
    let c = check_logit_bound(&[1.0, 0.0, -1.0], &[0.0, 0.5, 0.0]);
    println!("one pair: JSD {:.5} >= bound {:.5} (kappa {:.4})", c.jsd, c.bound, c.kappa);

    for dim in [3, 10, 50] {
        let lemma = verify_lemma_jsd(1000, dim, 0)?;
        let pinsker = verify_pinsker_chain(1000, dim, 0)?;
        println!(
            "dim {dim:>2}: logit bound {} violations (min slack {:.2e}), Pinsker {} violations",
            lemma.violations,
            lemma.min_slack,
            pinsker.violations()
        );
    }
    Ok(())
}
