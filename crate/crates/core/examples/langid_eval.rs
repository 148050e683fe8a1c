//! Prints held-out accuracy and the weakest labeled-language confidence of
//! the bundled detector for a few sample lengths.

use curate_core::langid::{heldout_samples, LanguageDetector, NgramDetector};

fn main() {
    let det = NgramDetector::bundled();
    for min_chars in [30usize, 100, 200] {
        let samples = heldout_samples(min_chars);
        let mut correct = 0usize;
        let mut weakest = 1.0f64;
        for (tag, text) in &samples {
            let detection = det.detect(text).expect("non-empty sample");
            if &detection.language == tag {
                correct += 1;
            }
            weakest = weakest.min(det.confidence_for(text, tag).expect("bundled tag"));
        }
        println!(
            "min_chars={min_chars:>3} samples={:>3} correct={:>3} weakest_confidence={weakest:.4}",
            samples.len(),
            correct
        );
    }
}
