//! Throughput report arithmetic.

use serde::Serialize;

/// Seconds spent in each pipeline stage, summed over images (and threads).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct StageTimes {
    pub preprocess_s: f64,
    pub forward_s: f64,
    pub postprocess_s: f64,
}

impl std::ops::AddAssign for StageTimes {
    fn add_assign(&mut self, rhs: Self) {
        self.preprocess_s += rhs.preprocess_s;
        self.forward_s += rhs.forward_s;
        self.postprocess_s += rhs.postprocess_s;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub n_images: usize,
    pub skipped: usize,
    /// Wall-clock seconds over preprocessing, forward and postprocessing.
    pub total_time_s: f64,
    pub fps: f64,
    pub stages: StageTimes,
    pub threads: usize,
}

impl BenchReport {
    pub fn new(n_images: usize, total_time_s: f64, stages: StageTimes) -> Self {
        BenchReport {
            n_images,
            skipped: 0,
            total_time_s,
            fps: fps(n_images, total_time_s),
            stages,
            threads: 1,
        }
    }

    /// FPS rounded to one decimal place.
    pub fn fps_display(&self) -> String {
        format!("{:.1}", self.fps)
    }

    pub fn summary(&self) -> String {
        format!(
            "{} images in {:.3} s: {} FPS (preprocess {:.3} s, forward {:.3} s, postprocess {:.3} s, {} thread{})",
            self.n_images,
            self.total_time_s,
            self.fps_display(),
            self.stages.preprocess_s,
            self.stages.forward_s,
            self.stages.postprocess_s,
            self.threads,
            if self.threads == 1 { "" } else { "s" },
        )
    }
}

pub fn fps(n_images: usize, total_time_s: f64) -> f64 {
    if total_time_s > 0.0 {
        n_images as f64 / total_time_s
    } else {
        f64::INFINITY
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fps_identity() {
        let r = BenchReport::new(20, 3.7, StageTimes::default());
        assert!((r.fps * r.total_time_s - 20.0).abs() <= 1e-6 * 20.0);
    }

    #[test]
    fn display_rounding() {
        let r = BenchReport::new(16067, 407.0, StageTimes::default());
        assert_eq!(format!("{:.2}", r.fps), "39.48");
        assert_eq!(r.fps_display(), "39.5");
        assert!(r.summary().contains("39.5 FPS"));
    }
}
