//! How the loss and its two terms respond to prediction quality on a toy
//! batch with a rare foreground.

use magnifier::loss::{
    auf_loss, modified_asymmetric_focal, modified_asymmetric_focal_tversky, modified_tversky_index,
    LossConfig, ProbTargetBatch,
};

fn main() -> magnifier::Result<()> {
    let cfg = LossConfig::default();
    println!(
        "lambda {}, delta {}, gamma {}",
        cfg.lambda, cfg.delta, cfg.gamma
    );

    // 2 burned pixels out of 20
    let truth: Vec<bool> = (0..20).map(|i| i < 2).collect();
    println!(
        "{:>10} {:>8} {:>8} {:>8} {:>8}",
        "confidence", "focal", "tversky", "mTI", "total"
    );
    for conf in [0.5, 0.6, 0.7, 0.8, 0.9, 0.99] {
        let p: Vec<f64> = truth
            .iter()
            .map(|&g| if g { conf } else { 1.0 - conf })
            .collect();
        let b = ProbTargetBatch::new(p, truth.clone())?;
        println!(
            "{conf:>10.2} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
            modified_asymmetric_focal(&b, cfg.delta, cfg.gamma),
            modified_asymmetric_focal_tversky(&b, cfg.delta, cfg.gamma),
            modified_tversky_index(&b, cfg.delta),
            auf_loss(&b, &cfg)
        );
    }

    let all_background: Vec<f64> = vec![0.01; 20];
    let b = ProbTargetBatch::new(all_background, truth)?;
    println!("predicting no burn at all: {:.4}", auf_loss(&b, &cfg));
    Ok(())
}
