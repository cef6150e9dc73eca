use crate::error::{Error, Result};
use crate::propagation::dilate;
use crate::scene::{Mask, MaskSet};

/// A prompt point in continuous pixel coordinates `(w, h)`.
pub type Prompt = [f64; 2];

/// Prompt-driven segmenter. Implementations are called concurrently from
/// several threads and must serialize internally if they need to.
pub trait Segmenter: Sync {
    /// Mask for the object indicated by `prompts` in view `view`.
    fn segment(&self, view: usize, prompts: &[Prompt]) -> Result<Mask>;
}

fn contains(mask: &Mask, p: &Prompt) -> bool {
    let (w, h) = (p[0].floor(), p[1].floor());
    w >= 0.0 && h >= 0.0 && (w as usize) < mask.width && (h as usize) < mask.height && mask.get(w as usize, h as usize)
}

/// Serves precomputed masks, e.g. candidate masks exported to disk. Picks
/// the mask containing the most prompts; ties go to the mask containing
/// the first prompt, then to the earlier mask.
pub struct MaskBankSegmenter {
    views: Vec<MaskSet>,
}

impl MaskBankSegmenter {
    pub fn new(views: Vec<MaskSet>) -> Self {
        MaskBankSegmenter { views }
    }

    fn view(&self, view: usize) -> Result<&MaskSet> {
        self.views
            .iter()
            .find(|s| s.view == view)
            .ok_or_else(|| Error::Segmenter(format!("no masks for view {view}")))
    }
}

impl Segmenter for MaskBankSegmenter {
    fn segment(&self, view: usize, prompts: &[Prompt]) -> Result<Mask> {
        let set = self.view(view)?;
        let mut best: Option<(&Mask, usize, bool)> = None;
        for (_, m) in &set.masks {
            let hits = prompts.iter().filter(|p| contains(m, p)).count();
            let first = prompts.first().is_some_and(|p| contains(m, p));
            if hits == 0 {
                continue;
            }
            let better = match best {
                None => true,
                Some((_, bh, bf)) => hits > bh || (hits == bh && first && !bf),
            };
            if better {
                best = Some((m, hits, first));
            }
        }
        best.map(|(m, _, _)| m.clone())
            .ok_or_else(|| Error::Segmenter(format!("no mask contains the prompts in view {view}")))
    }
}

/// Synthetic oracle: returns the ground-truth mask containing the first
/// prompt, optionally dilated by `noise_px` to imitate sloppy boundaries.
pub struct OracleSegmenter {
    views: Vec<MaskSet>,
    noise_px: usize,
}

impl OracleSegmenter {
    pub fn new(gt: Vec<MaskSet>) -> Self {
        OracleSegmenter {
            views: gt,
            noise_px: 0,
        }
    }

    pub fn with_noise(mut self, noise_px: usize) -> Self {
        self.noise_px = noise_px;
        self
    }
}

impl Segmenter for OracleSegmenter {
    fn segment(&self, view: usize, prompts: &[Prompt]) -> Result<Mask> {
        let first = prompts
            .first()
            .ok_or_else(|| Error::Segmenter("no prompts".into()))?;
        let set = self
            .views
            .iter()
            .find(|s| s.view == view)
            .ok_or_else(|| Error::Segmenter(format!("no ground truth for view {view}")))?;
        let m = set
            .masks
            .iter()
            .map(|(_, m)| m)
            .find(|m| contains(m, first))
            .ok_or_else(|| Error::Segmenter(format!("prompt hits background in view {view}")))?;
        Ok(dilate(m, self.noise_px))
    }
}

/// Always fails; useful to exercise fallbacks.
pub struct FailingSegmenter;

impl Segmenter for FailingSegmenter {
    fn segment(&self, _view: usize, _prompts: &[Prompt]) -> Result<Mask> {
        Err(Error::Segmenter("segmenter unavailable".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::MaskStage;

    fn bank() -> Vec<MaskSet> {
        let a = Mask::from_fn(10, 10, |x, _| x < 5);
        let b = Mask::from_fn(10, 10, |x, y| x >= 5 && y < 5);
        vec![MaskSet {
            view: 3,
            width: 10,
            height: 10,
            stage: MaskStage::Raw,
            masks: vec![(1, a), (2, b)],
        }]
    }

    #[test]
    fn bank_picks_mask_with_most_prompts() {
        let s = MaskBankSegmenter::new(bank());
        let m = s.segment(3, &[[1.0, 1.0], [7.0, 1.0], [8.0, 2.0]]).unwrap();
        assert!(m.get(7, 1) && !m.get(1, 1));
        assert!(s.segment(3, &[[8.0, 8.0]]).is_err());
        assert!(s.segment(0, &[[1.0, 1.0]]).is_err());
    }

    #[test]
    fn oracle_uses_first_prompt() {
        let s = OracleSegmenter::new(bank());
        let m = s.segment(3, &[[1.0, 1.0], [7.0, 1.0], [8.0, 2.0]]).unwrap();
        assert!(m.get(1, 1));
        let noisy = OracleSegmenter::new(bank()).with_noise(1);
        assert_eq!(noisy.segment(3, &[[1.0, 1.0]]).unwrap().count(), 60);
    }
}
