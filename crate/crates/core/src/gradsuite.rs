//! Gradient-check problems for every network shape the trainer builds and
//! for the composed objectives that differentiate through several networks.

use crate::actor::Actor;
use crate::critic::{Aggregation, Critic};
use crate::error::Result;
use crate::flow::{FlowPolicy, FlowTargets};
use crate::kernel::{GradProblem, Matrix, Mlp, MlpSpec, ParamSet, Rng};

/// Sizes used by the suite; small enough for per-parameter finite differences.
#[derive(Clone, Debug)]
pub struct SuiteShape {
    pub state_dim: usize,
    pub action_dim: usize,
    pub hidden: Vec<usize>,
    pub time_embed_dim: usize,
    pub batch: usize,
}

impl SuiteShape {
    pub fn label(&self) -> String {
        format!("s{}a{}", self.state_dim, self.action_dim)
    }
}

/// Shapes matching each environment's dimensions.
pub fn default_shapes() -> Vec<SuiteShape> {
    [(1, 1), (2, 2)]
        .into_iter()
        .map(|(s, a)| SuiteShape {
            state_dim: s,
            action_dim: a,
            hidden: vec![16, 16],
            time_embed_dim: 8,
            batch: 6,
        })
        .collect()
}

fn rand(rng: &mut Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_vec(rows, cols, rng.standard_normal(rows * cols).into_iter().map(|v| v * scale).collect())
        .expect("shape")
}

fn net(spec: &MlpSpec, p: &ParamSet) -> Result<Mlp> {
    Mlp::from_params(spec.clone(), p.clone())
}

/// Both critic heads (with layer normalization) under the TD regression loss.
pub fn critic_problem(shape: &SuiteShape, seed: u64) -> Result<GradProblem<'static>> {
    let mut rng = Rng::new(seed, 11);
    let c = Critic::new(shape.state_dim, shape.action_dim, &shape.hidden, Aggregation::Mean, 0.99, 0.005, &mut rng)?;
    let s = rand(&mut rng, shape.batch, shape.state_dim, 1.0);
    let a = rand(&mut rng, shape.batch, shape.action_dim, 0.5);
    let y = rng.standard_normal(shape.batch);
    let spec = c.online[0].spec.clone();
    let (sd, ad) = (shape.state_dim, shape.action_dim);
    let build = move |ps: &[ParamSet]| -> Result<Critic> {
        Critic::from_heads([net(&spec, &ps[0])?, net(&spec, &ps[1])?], Aggregation::Mean, 0.99, 0.005, sd, ad)
    };
    let build2 = build.clone();
    let (s2, a2, y2) = (s.clone(), a.clone(), y.clone());
    Ok(GradProblem {
        name: format!("critic heads with layer norm ({})", shape.label()),
        nets: vec![
            ("critic_1".into(), c.online[0].params.clone()),
            ("critic_2".into(), c.online[1].params.clone()),
        ],
        loss: Box::new(move |ps| Ok(build(ps)?.loss_and_grads(&s, &a, &y)?.0)),
        loss_and_grad: Box::new(move |ps| {
            let (l, [g1, g2]) = build2(ps)?.loss_and_grads(&s2, &a2, &y2)?;
            Ok((l, vec![g1, g2]))
        }),
    })
}

/// The actor objective differentiated through a fixed critic.
pub fn actor_problem(shape: &SuiteShape, aggregation: Aggregation, use_q: bool, seed: u64) -> Result<GradProblem<'static>> {
    let mut rng = Rng::new(seed, 12);
    let (sd, ad) = (shape.state_dim, shape.action_dim);
    let actor = Actor::new(sd, ad, &shape.hidden, &mut rng)?;
    let critic = Critic::new(sd, ad, &shape.hidden, aggregation, 0.99, 0.005, &mut rng)?;
    let s = rand(&mut rng, shape.batch, sd, 1.0);
    let z = rand(&mut rng, shape.batch, ad, 0.3);
    let target = rand(&mut rng, shape.batch, ad, 0.3);
    let (lambda, alpha) = (0.7, 1.3);
    let spec = actor.net.spec.clone();
    let eval = move |ps: &[ParamSet], with_grad: bool| -> Result<(f64, Option<ParamSet>)> {
        let a = Actor::from_net(net(&spec, &ps[0])?, sd, ad)?;
        let p = a.propose(&critic, &s, &z, use_q)?;
        let (loss, g) = a.loss(&p, &target, lambda, alpha, use_q)?;
        Ok((loss.total, with_grad.then_some(g)))
    };
    let eval2 = eval.clone();
    let what = if use_q {
        format!("actor objective through {aggregation:?} critic")
    } else {
        "actor distillation".to_string()
    };
    Ok(GradProblem {
        name: format!("{what} ({})", shape.label()),
        nets: vec![("actor".into(), actor.net.params.clone())],
        loss: Box::new(move |ps| Ok(eval(ps, false)?.0)),
        loss_and_grad: Box::new(move |ps| {
            let (l, g) = eval2(ps, true)?;
            Ok((l, vec![g.expect("requested")]))
        }),
    })
}

/// The velocity field (with time embedding) under the flow-matching loss,
/// unweighted or with random per-row weights.
pub fn flow_problem(shape: &SuiteShape, weighted: bool, seed: u64) -> Result<GradProblem<'static>> {
    let mut rng = Rng::new(seed, 13);
    let (sd, ad) = (shape.state_dim, shape.action_dim);
    let flow = FlowPolicy::new(sd, ad, &shape.hidden, shape.time_embed_dim, 10, &mut rng)?;
    let s = rand(&mut rng, shape.batch, sd, 1.0);
    let a = rand(&mut rng, shape.batch, ad, 0.5);
    let eps = rand(&mut rng, shape.batch, ad, 1.0);
    let t: Vec<f64> = (0..shape.batch).map(|_| rng.uniform()).collect();
    let g: Vec<f64> = (0..shape.batch).map(|_| rng.uniform()).collect();
    let spec = flow.net.spec.clone();
    let eval = move |ps: &[ParamSet]| -> Result<(f64, ParamSet)> {
        let f = FlowPolicy::from_net(net(&spec, &ps[0])?, sd, ad, 10)?;
        let targets = FlowTargets {
            states: &s,
            actions: &a,
            eps: &eps,
            t: &t,
        };
        if weighted {
            f.weighted_fm_loss(&targets, &g)
        } else {
            f.fm_bc_loss(&targets)
        }
    };
    let eval2 = eval.clone();
    let what = if weighted {
        "weighted flow matching"
    } else {
        "flow matching"
    };
    Ok(GradProblem {
        name: format!("{what} with time embedding ({})", shape.label()),
        nets: vec![("flow".into(), flow.net.params.clone())],
        loss: Box::new(move |ps| Ok(eval(ps)?.0)),
        loss_and_grad: Box::new(move |ps| {
            let (l, g) = eval2(ps)?;
            Ok((l, vec![g]))
        }),
    })
}

/// Every problem in the suite for the given shapes.
pub fn suite(shapes: &[SuiteShape], seed: u64) -> Result<Vec<GradProblem<'static>>> {
    let mut out = Vec::new();
    for shape in shapes {
        out.push(critic_problem(shape, seed)?);
        out.push(actor_problem(shape, Aggregation::Mean, false, seed)?);
        out.push(actor_problem(shape, Aggregation::Mean, true, seed)?);
        out.push(actor_problem(shape, Aggregation::Min, true, seed)?);
        out.push(flow_problem(shape, false, seed)?);
        out.push(flow_problem(shape, true, seed)?);
    }
    Ok(out)
}
