// Plain DPO next to the severity-weighted variant on the same scores.

use hallu_pref::preference::{dpo_loss, hsa_dpo_loss, PairScores};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let beta = 0.1;
    let pair = |severity| PairScores {
        chosen_logp_policy: -10.0,
        chosen_logp_ref: -11.0,
        rejected_logp_policy: -12.0,
        rejected_logp_ref: -12.5,
        severity,
    };

    println!("{:>8} {:>10} {:>12} {:>12}", "S", "loss", "d/d chosen", "d/d rejected");
    for s in [0.0, 1.0, 2.0, 3.0] {
        let out = hsa_dpo_loss(&[pair(s)], beta)?;
        let g = &out.grads[0];
        println!("{s:>8.1} {:>10.6} {:>12.6} {:>12.6}", out.loss, g.chosen_policy, g.rejected_policy);
    }

    // With unit severity the two losses coincide.
    let plain = dpo_loss(&[pair(1.0)], beta)?;
    let weighted = hsa_dpo_loss(&[pair(1.0)], beta)?;
    assert_eq!(plain.loss, weighted.loss);
    println!("S=1 matches plain DPO: {:.6}", plain.loss);
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
