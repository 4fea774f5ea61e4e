use rand::Rng;

use crate::error::{HydraError, Result};
use crate::image::{Centroid, Image};
use crate::model::Predictor;
use crate::ssl::augment::{augment_k, Augmented};
use crate::ssl::ProbDist;

/// Guessed targets for one unlabelled image.
#[derive(Clone, Debug)]
pub struct PseudoLabel {
    /// Mean of the class distributions predicted for the augmented views.
    pub dist: ProbDist,
    /// Centroid predicted on the original, unaugmented image.
    pub centroid: Centroid,
    /// The augmented views the distribution was averaged over.
    pub views: Vec<Augmented>,
}

pub fn pseudo_label<P, R>(predictor: &P, image: &Image, k: usize, rng: &mut R) -> Result<PseudoLabel>
where
    P: Predictor + ?Sized,
    R: Rng + ?Sized,
{
    let mut out = pseudo_label_batch(predictor, &[image], k, rng)?;
    Ok(out.remove(0))
}

/// Batched form of [`pseudo_label`]: one `predict` call over all `k · n`
/// views followed by the `n` originals.
pub fn pseudo_label_batch<P, R>(
    predictor: &P,
    images: &[&Image],
    k: usize,
    rng: &mut R,
) -> Result<Vec<PseudoLabel>>
where
    P: Predictor + ?Sized,
    R: Rng + ?Sized,
{
    if k == 0 {
        return Err(HydraError::Argument("augmentation count k must be at least 1".into()));
    }
    let views: Vec<Vec<Augmented>> = images
        .iter()
        .map(|img| augment_k(img, None, k, rng))
        .collect::<Result<_>>()?;
    let mut inputs: Vec<&Image> = views.iter().flatten().map(|a| &a.image).collect();
    inputs.extend_from_slice(images);
    let preds = predictor.predict(&inputs)?;
    if preds.len() != inputs.len() {
        return Err(HydraError::Argument(format!(
            "predictor returned {} outputs for {} inputs",
            preds.len(),
            inputs.len()
        )));
    }
    let (view_preds, orig_preds) = preds.split_at(images.len() * k);
    views
        .into_iter()
        .zip(view_preds.chunks(k))
        .zip(orig_preds)
        .map(|((views, vp), orig)| {
            let dists: Vec<ProbDist> = vp.iter().map(|p| p.probs.clone()).collect();
            Ok(PseudoLabel {
                dist: ProbDist::mean(&dists)?,
                centroid: orig.centroid,
                views,
            })
        })
        .collect()
}
