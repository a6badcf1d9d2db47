//! The gradient reversal layer leaves values alone and flips the gradient.

use msda::adaptation::GrlConfig;
use msda::autodiff::Graph;
use msda::Tensor;

fn main() {
    let lambda = GrlConfig::default().lambda;
    let mut g = Graph::new();
    let x = g.param(Tensor::from_vec(&[4], vec![1.0, -2.0, 0.5, 3.0]).unwrap());
    let y = g.gradient_reversal(x, lambda);
    let upstream = Tensor::from_vec(&[4], vec![1.0, 1.0, -2.0, 0.25]).unwrap();
    let grads = g.backward_with(y, upstream.clone());
    println!("lambda     {lambda}");
    println!("forward    {:?}", g.value(y).data());
    println!("upstream   {:?}", upstream.data());
    println!("backward   {:?}", grads.get(x).unwrap().data());
}
