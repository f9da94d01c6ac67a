//! Prints the directional trend numbers for the default desk-scale
//! experiment, one block per seed. Useful for eyeballing calibration
//! before running the full test suite.

use std::time::Instant;

use tempmerge::experiment::{run_seed, spearman_against_position, ExperimentConfig};

fn main() {
    let config = ExperimentConfig::default();
    for &seed in &config.seeds {
        let t0 = Instant::now();
        let outcome = run_seed(&config, seed).expect("seed run");
        println!("seed {seed} ({:.1}s)", t0.elapsed().as_secs_f64());
        println!(
            "  base    temporal {:.4}  non-temporal {:.4}",
            outcome.base_temporal_r20, outcome.base_nontemporal_r20
        );
        println!(
            "  pooled  temporal {:.4}  non-temporal {:.4}",
            outcome.pooled_temporal_r20, outcome.pooled_nontemporal_r20
        );
        println!(
            "  tsm     temporal {:.4}  non-temporal {:.4}",
            outcome.tsm_temporal_r20, outcome.tsm_nontemporal_r20
        );
        let seq = &outcome.sequence_temporal_r20;
        println!(
            "  sequence {:?} rho {:.3}",
            seq.iter().map(|v| (v * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
            spearman_against_position(seq)
        );
        println!("  convexity {}", outcome.convexity_holds);
        let mut wins = 0usize;
        let mut cells = 0usize;
        for (model_spec, breakdown) in &outcome.specialist_breakdowns {
            for (group, recall) in &breakdown.per_specifier {
                if group == model_spec {
                    continue;
                }
                cells += 1;
                let tsm = outcome.tsm_breakdown.per_specifier.get(group).copied().unwrap_or(0.0);
                if tsm >= *recall {
                    wins += 1;
                } else {
                    println!(
                        "    lost cell: {model_spec} specialist on {group}: {recall:.3} vs tsm {tsm:.3}"
                    );
                }
            }
        }
        println!(
            "  tsm covers {wins}/{cells} away cells ({:.1}%)",
            100.0 * wins as f64 / cells as f64
        );
    }
}
