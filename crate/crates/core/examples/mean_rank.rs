//! Ranks algorithms across (dataset, metric) columns.
//!
//! cargo run --example mean_rank -- [scores.csv]   (algorithm,column,score)

use std::fs::File;

use magnifier::metrics::{mean_rank, ScoreTable, TieMethod};

fn main() -> magnifier::Result<()> {
    let table = match std::env::args().nth(1) {
        Some(path) => ScoreTable::read_csv(File::open(path)?)?,
        None => ScoreTable::new(
            vec!["baseline".into(), "wide".into(), "dual".into()],
            vec![
                "north/F1".into(),
                "north/IoU".into(),
                "south/F1".into(),
                "south/IoU".into(),
            ],
            vec![
                vec![70.1, 54.0, 81.0, 68.0],
                vec![72.4, 56.7, 81.0, 68.0],
                vec![74.9, 59.8, 80.2, 67.1],
            ],
        )?,
    };
    let avg = mean_rank(&table, TieMethod::Average);
    let min = mean_rank(&table, TieMethod::Min);
    println!("{:<12} {:>8} {:>8}", "algorithm", "MR avg", "MR min");
    for (i, name) in table.algorithms.iter().enumerate() {
        println!("{name:<12} {:>8.2} {:>8.2}", avg[i], min[i]);
    }
    Ok(())
}
