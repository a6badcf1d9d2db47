//! Binary domain loss over probability maps.

use msda::adaptation::{domain_classification_loss, DomainLabelVector, DomainProbMap, MapScale};
use msda::detector::Scale;
use msda::Tensor;

fn main() -> msda::Result<()> {
    let labels = DomainLabelVector::split(2, 2);
    let chance = DomainProbMap {
        scale: MapScale::Scale(Scale::F2),
        probs: Tensor::full(&[4, 4, 4], 0.5),
    };
    println!("chance-level maps  {:.6}", domain_classification_loss(&[chance], &labels)?);

    let mut confident = vec![0.9; 32];
    confident.extend(vec![0.1; 32]);
    let sure = DomainProbMap {
        scale: MapScale::Scale(Scale::F2),
        probs: Tensor::from_vec(&[4, 4, 4], confident)?,
    };
    println!("correct, confident {:.6}", domain_classification_loss(std::slice::from_ref(&sure), &labels)?);
    let swapped = DomainLabelVector::new([0, 0, 1, 1].to_vec())?;
    println!("wrong, confident   {:.6}", domain_classification_loss(&[sure], &swapped)?);
    Ok(())
}
