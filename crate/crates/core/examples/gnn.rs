//! Forward pass, action distribution and one gradient step of the graph
//! policy network on the distributor's candidate graph.
//!
//! cargo run -p iscc --example gnn

use iscc::fixtures;
use iscc::market::publish_demand;
use iscc::neural::{backward, gnn_forward, init_params, loss_value, Choice, GnnArch, Logit, LossSpec};
use iscc::trainer::{distributor_view, focus, DISTRIBUTOR_FEATURES};

fn main() -> iscc::Result<()> {
    let s = fixtures::tiny3x4();
    let (graph, options) = distributor_view(&s, &publish_demand(&s));
    let mut params = init_params(GnnArch::new(DISTRIBUTOR_FEATURES), 7)?;
    println!("{} parameters", params.values.len());

    let first = &options[0];
    let g = focus(&graph, first.levels.iter().map(|(_, v)| *v));
    let f = gnn_forward(&params, &g)?;
    let choice = Choice {
        options: std::iter::once(Logit::Fixed).chain(first.levels.iter().map(|(_, v)| Logit::Vertex(*v))).collect(),
        taken: 1,
        advantage: 1.0,
    };
    println!("{}: skip or levels {:?}", first.target, first.levels.iter().map(|(l, _)| *l).collect::<Vec<_>>());
    println!("probabilities {:?}, value {:.4}", choice.probabilities(&f.scores), f.value);

    // reinforce the first level
    let spec = LossSpec { choices: vec![choice.clone()], entropy_weight: 0.01, value_weight: 0.5, returns: vec![1.0] };
    let before = loss_value(&params, &g, &spec)?;
    let grads = backward(&params, &g, &f, &spec)?;
    for (p, d) in params.values.iter_mut().zip(&grads.values) {
        *p -= 0.1 * d;
    }
    let f2 = gnn_forward(&params, &g)?;
    println!("loss {before:.4} -> {:.4}", loss_value(&params, &g, &spec)?);
    println!("probabilities {:?}, value {:.4}", choice.probabilities(&f2.scores), f2.value);
    Ok(())
}
