//! Records a small network on a tape, backpropagates, and takes Adam steps
//! toward a target.

use graphvae::tensor::{Adam, AdamConfig, Tape, Tensor};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let x = Tensor::from_rows(&[vec![1.0, -2.0], vec![0.5, 3.0]])?;
    let mut w = Tensor::from_rows(&[vec![0.1, 0.2, 0.3], vec![-0.1, 0.0, 0.4]])?;
    let mut adam = Adam::new(AdamConfig::default(), &[w.shape()]);

    for step in 0..=200 {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let wv = tape.param(w.clone());
        let h = tape.matmul(xv, wv)?;
        let p = tape.sigmoid(h)?;
        // push every output toward 1
        let per_entry = tape.bce(p, vec![1.0; 6])?;
        let loss = tape.mean(per_entry)?;
        let grads = tape.backward(loss)?;
        if step % 50 == 0 {
            println!("step {step:3}: loss {:.5}", tape.value(loss).item());
        }
        let g = grads.get_or_zeros(wv, w.shape());
        adam.update(std::slice::from_mut(&mut w), &[g])?;
    }
    println!("weights after training: {:?}", w.data());
    Ok(())
}
