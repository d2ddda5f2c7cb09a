use eegdet_nn::gradcheck::{check_input, check_loss, check_parameters};
use eegdet_nn::{Activation, LayerSpec, Loss, Network, NnRng, Tensor};
use rand::{Rng, SeedableRng};

const TOL: f64 = 1e-4;
const H: f64 = 1e-5;

fn random_tensor(shape: &[usize], rng: &mut NnRng) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Builds `body` + flatten + dense(outputs) (+ sigmoid for cross-entropy),
/// then checks parameter and input gradients.
fn check(body: &[LayerSpec], input: &[usize], loss: Loss, seed: u64) -> f64 {
    let mut rng = NnRng::seed_from_u64(seed);
    let mut specs = body.to_vec();
    let chain = Network::shape_chain(&specs, input).unwrap();
    let last = chain.last().unwrap().clone();
    if last.len() > 1 {
        specs.push(LayerSpec::Flatten);
    }
    let flat: usize = last.iter().product();
    specs.push(LayerSpec::Dense { inputs: flat, units: 2 });
    if loss == Loss::CrossEntropy {
        specs.push(LayerSpec::Activation(Activation::Sigmoid));
    }
    let mut net = Network::build(&specs, &mut rng).unwrap();
    let batch = 2;
    let mut shape = vec![batch];
    shape.extend_from_slice(input);
    let x = random_tensor(&shape, &mut rng);
    let target = Tensor::from_vec(&[batch, 2], (0..2 * batch).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
    let p = check_parameters(&mut net, &x, &target, loss, seed, H, Some(40)).unwrap();
    let i = check_input(&mut net, &x, &target, loss, seed, H).unwrap();
    p.max_rel_error.max(i.max_rel_error)
}

#[test]
fn dense_and_activations() {
    for (k, act) in Activation::ALL.into_iter().enumerate() {
        for loss in [Loss::MeanSquared, Loss::CrossEntropy] {
            let body = [LayerSpec::Dense { inputs: 5, units: 4 }, LayerSpec::Activation(act)];
            let err = check(&body, &[5], loss, 100 + k as u64);
            assert!(err < TOL, "{act} {loss}: {err}");
        }
    }
}

#[test]
fn conv2d_and_pool2d() {
    let body = [
        LayerSpec::Conv2d { kernel: 3, inputs: 2, filters: 3 },
        LayerSpec::Activation(Activation::Tanh),
        LayerSpec::MaxPool2d { size: 2 },
    ];
    for seed in 0..3 {
        let err = check(&body, &[5, 4, 2], Loss::MeanSquared, seed);
        assert!(err < TOL, "{err}");
    }
}

#[test]
fn conv1d_and_pool1d() {
    let body = [
        LayerSpec::Conv1d { kernel: 3, inputs: 3, filters: 2 },
        LayerSpec::MaxPool1d { size: 2 },
    ];
    for seed in 0..3 {
        let err = check(&body, &[7, 3], Loss::CrossEntropy, seed);
        assert!(err < TOL, "{err}");
    }
}

#[test]
fn lstm_variants() {
    for seq in [false, true] {
        let body = [LayerSpec::Lstm { inputs: 3, hidden: 4, return_sequences: seq }];
        let err = check(&body, &[5, 3], Loss::MeanSquared, 7);
        assert!(err < TOL, "lstm seq={seq}: {err}");
        let body = [LayerSpec::BiLstm { inputs: 3, hidden: 2, return_sequences: seq }];
        let err = check(&body, &[4, 3], Loss::CrossEntropy, 8);
        assert!(err < TOL, "bilstm seq={seq}: {err}");
    }
}

#[test]
fn regularizers_replay_their_masks() {
    let body = [
        LayerSpec::Dense { inputs: 6, units: 6 },
        LayerSpec::Dropout { rate: 0.4 },
        LayerSpec::GaussianNoise { std: 0.2 },
    ];
    let err = check(&body, &[6], Loss::MeanSquared, 3);
    assert!(err < TOL, "{err}");
}

#[test]
fn losses_match_finite_differences() {
    let mut rng = NnRng::seed_from_u64(5);
    for _ in 0..10 {
        let p = Tensor::from_vec(&[3, 2], (0..6).map(|_| rng.random_range(0.05..0.95)).collect()).unwrap();
        let t = Tensor::from_vec(&[3, 2], (0..6).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
        for loss in [Loss::MeanSquared, Loss::CrossEntropy] {
            let r = check_loss(loss, &p, &t, H).unwrap();
            assert!(r.max_rel_error < 1e-6, "{loss}: {}", r.max_rel_error);
        }
    }
}

#[test]
fn recurrent_convolutional_graph_small() {
    // Time-distributed 2-D stage flattened per frame, then the 1-D and
    // bidirectional recurrent stages of the recurrent convolutional network.
    let mut rng = NnRng::seed_from_u64(21);
    let frame = [
        LayerSpec::Conv2d { kernel: 3, inputs: 1, filters: 2 },
        LayerSpec::Activation(Activation::Elu),
        LayerSpec::MaxPool2d { size: 2 },
        LayerSpec::Flatten,
    ];
    let head = [
        LayerSpec::Conv1d { kernel: 3, inputs: 8, filters: 3 },
        LayerSpec::Activation(Activation::Elu),
        LayerSpec::MaxPool1d { size: 2 },
        LayerSpec::BiLstm { inputs: 3, hidden: 2, return_sequences: true },
        LayerSpec::BiLstm { inputs: 4, hidden: 3, return_sequences: false },
        LayerSpec::Dense { inputs: 6, units: 2 },
        LayerSpec::Activation(Activation::Sigmoid),
    ];
    let mut frame_net = Network::build(&frame, &mut rng).unwrap();
    let mut head_net = Network::build(&head, &mut rng).unwrap();
    let (batch, steps) = (2, 6);
    let frames = random_tensor(&[batch * steps, 4, 4, 1], &mut rng);
    let target = Tensor::from_vec(&[batch, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();

    let loss_of = |f: &mut Network, h: &mut Network| -> f64 {
        let mut r = NnRng::seed_from_u64(0);
        let e = f.forward(&frames, true, &mut r).unwrap();
        let e = e.reshape(&[batch, steps, 8]).unwrap();
        let y = h.forward(&e, true, &mut r).unwrap();
        Loss::MeanSquared.eval(&y, &target).unwrap().0
    };

    frame_net.zero_grads();
    head_net.zero_grads();
    let mut r = NnRng::seed_from_u64(0);
    let e = frame_net.forward(&frames, true, &mut r).unwrap().reshape(&[batch, steps, 8]).unwrap();
    let y = head_net.forward(&e, true, &mut r).unwrap();
    let (_, dy) = Loss::MeanSquared.eval(&y, &target).unwrap();
    let de = head_net.backward(&dy).unwrap().reshape(&[batch * steps, 8]).unwrap();
    frame_net.backward(&de).unwrap();

    let mut worst: f64 = 0.0;
    for which in 0..2 {
        let grads = if which == 0 { frame_net.grads() } else { head_net.grads() };
        for (ti, g) in grads.iter().enumerate() {
            for idx in 0..g.len() {
                let bump = |net: &mut Network, d: f64| {
                    let mut slot = 0;
                    net.visit_params(&mut |p, _| {
                        if slot == ti {
                            p[idx] += d;
                        }
                        slot += 1;
                    });
                };
                let (up, down) = if which == 0 {
                    bump(&mut frame_net, H);
                    let up = loss_of(&mut frame_net, &mut head_net);
                    bump(&mut frame_net, -2.0 * H);
                    let down = loss_of(&mut frame_net, &mut head_net);
                    bump(&mut frame_net, H);
                    (up, down)
                } else {
                    bump(&mut head_net, H);
                    let up = loss_of(&mut frame_net, &mut head_net);
                    bump(&mut head_net, -2.0 * H);
                    let down = loss_of(&mut frame_net, &mut head_net);
                    bump(&mut head_net, H);
                    (up, down)
                };
                let num = (up - down) / (2.0 * H);
                worst = worst.max(eegdet_nn::gradcheck::relative_error(g.data()[idx], num));
            }
        }
    }
    assert!(worst < TOL, "{worst}");
}
