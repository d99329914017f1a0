//! Noise-distribution study across completer capabilities, with CSV and
//! SVG report panels.
//!
//! ```bash
//! cargo run -p scan --example noise_study
//! ```

use scan::confidence::ConfidenceBucket;
use scan::model::SamplingParams;
use scan::noise::{distribution_report, run_noise_study, write_report_files, StudyWorld};
use scan::simworld::SimCompleterParams;

#[tokio::main(flavor = "current_thread")]
async fn main() {
    // Three worlds spanning the capability range; each completer annotates
    // responses it generated itself.
    let worlds: Vec<StudyWorld> = [0.1, 0.5, 0.9]
        .iter()
        .map(|&p_solve| StudyWorld {
            params: SimCompleterParams::new(p_solve, 0.2, 19),
            n_questions: 30,
            n_responses: 16,
            step_range: (3, 8),
        })
        .collect();

    let records = run_noise_study(&worlds, 8, &SamplingParams::default())
        .await
        .unwrap();
    let report = distribution_report(&records).unwrap();

    println!("{} records", report.total);
    println!("\ncategory counts per confidence bucket:");
    for (bucket, cats) in &report.bucket_category_counts {
        for (cat, count) in cats {
            println!("  {bucket:<7} {cat:<17} {count}");
        }
    }

    println!("\nnoisy-positive rate among predicted-correct responses:");
    for bucket in [ConfidenceBucket::Low, ConfidenceBucket::Medium, ConfidenceBucket::High] {
        match report.noisy_positive_rate(bucket) {
            Some(rate) => println!("  {bucket:<7} {rate:.4}"),
            None => println!("  {bucket:<7} (no predicted-correct records)"),
        }
    }

    println!("\ndeviation histogram (high-bucket inaccurate negatives):");
    for (dev, count) in &report.deviation_high_bucket {
        println!("  {dev:+} {count}");
    }

    let out_dir = std::env::temp_dir().join("scan-example-noise");
    std::fs::create_dir_all(&out_dir).unwrap();
    write_report_files(&report, &out_dir, true).unwrap();
    println!("\nCSV + SVG panels in {}", out_dir.display());
}
