use echovit::model::{
    add_embeddings, encoder_forward, finetune_schema, gradcheck_model, patchify_indices,
    predict_ef, regression_head, tubelet_embed, ArchSize, EncoderOutput, ModelConfig, ParamStore,
    TokenGrid, TokenSequence,
};
use echovit::tensor::GradcheckOptions;
use echovit::{Graph, Tensor};

fn small(dim: usize, depth: usize) -> ModelConfig {
    let mut c = ModelConfig::new(ArchSize::Toy, 8, 4, 4);
    c.encoder.embed_dim = dim;
    c.encoder.depth = depth;
    c.encoder.heads = 2;
    c
}

fn ramp(shape: [usize; 3]) -> Tensor {
    let n = shape.iter().product::<usize>();
    Tensor::new(
        shape,
        (0..n)
            .map(|i| ((i * 31) % 97) as f32 / 97.0 - 0.5)
            .collect(),
    )
    .unwrap()
}

#[test]
fn tubelet_shapes_and_zero_video() {
    let cfg = small(16, 1);
    let mut store = ParamStore::<f32>::init(&finetune_schema(&cfg).unwrap(), 0).unwrap();
    let g = Graph::new();
    let p = store.bind_frozen(&g);
    let seq = tubelet_embed(g.constant(Tensor::zeros([4, 8, 8]).unwrap()), &cfg, &p).unwrap();
    assert_eq!(seq.tokens.shape(), vec![8, 16]);
    assert!(seq.tokens.value().data().iter().all(|&v| v == 0.0));

    // Mismatched video dims are a config error.
    assert!(tubelet_embed(g.constant(Tensor::zeros([2, 8, 8]).unwrap()), &cfg, &p).is_err());

    // Nonzero bias shows up on every token.
    store.insert("enc.patch_embed.bias", Tensor::full([16], 0.5).unwrap());
    let g = Graph::new();
    let p = store.bind_frozen(&g);
    let seq = tubelet_embed(g.constant(Tensor::zeros([4, 8, 8]).unwrap()), &cfg, &p).unwrap();
    assert!(seq.tokens.value().data().iter().all(|&v| v == 0.5));
}

#[test]
fn full_size_grid_shape() {
    let mut cfg = ModelConfig::new(ArchSize::Toy, 112, 32, 16);
    cfg.encoder.embed_dim = 8;
    cfg.encoder.heads = 2;
    let store = ParamStore::<f32>::init(&finetune_schema(&cfg).unwrap(), 0).unwrap();
    let g = Graph::new();
    let p = store.bind_frozen(&g);
    let seq = tubelet_embed(g.constant(Tensor::zeros([32, 112, 112]).unwrap()), &cfg, &p).unwrap();
    assert_eq!(seq.tokens.shape(), vec![784, 8]);
}

#[test]
fn single_tubelet_matches_hand_flatten() {
    let mut cfg = ModelConfig::new(ArchSize::Toy, 2, 2, 2);
    cfg.encoder.embed_dim = 3;
    cfg.encoder.heads = 1;
    let mut store = ParamStore::<f32>::init(&finetune_schema(&cfg).unwrap(), 3).unwrap();
    store.insert(
        "enc.patch_embed.bias",
        Tensor::new([3], vec![0.1, 0.2, 0.3]).unwrap(),
    );
    let video: Vec<f32> = (1..=8).map(|v| v as f32).collect();
    let w = store.get("enc.patch_embed.weight").unwrap().clone();
    let g = Graph::new();
    let p = store.bind_frozen(&g);
    let seq = tubelet_embed(
        g.constant(Tensor::new([2, 2, 2], video.clone()).unwrap()),
        &cfg,
        &p,
    )
    .unwrap();
    let got = seq.tokens.value();
    assert_eq!(got.shape(), &[1, 3]);
    // flatten order (frame, row, col) is the raw memory order here
    for j in 0..3 {
        let mut acc = [0.1f32, 0.2, 0.3][j];
        for (i, &x) in video.iter().enumerate() {
            acc += x * w.data()[i * 3 + j];
        }
        assert!((got.data()[j] - acc).abs() < 1e-5);
    }
}

#[test]
fn patch_order_is_time_major() {
    let cfg = ModelConfig::new(ArchSize::Toy, 4, 4, 2);
    let idx = patchify_indices(&cfg).unwrap();
    // token 1 = (τ 0, row 0, col 1): frame 0, pixel (0,2)
    assert_eq!(&idx[8..12], &[2, 3, 6, 7]);
    // token 4 = (τ 1, 0, 0): starts at frame 2
    assert_eq!(idx[32], 2 * 16);
}

#[test]
fn embeddings_add_and_class_token() {
    let grid = TokenGrid { t: 2, h: 2, w: 2 };
    let g = Graph::new();
    let tokens = g.constant(Tensor::full([8, 3], 1.0).unwrap());
    let seq = TokenSequence {
        tokens,
        grid,
        has_class_token: false,
    };
    let zero_pos = g.constant(Tensor::zeros([4, 3]).unwrap());
    let zero_time = g.constant(Tensor::zeros([2, 3]).unwrap());
    let same = add_embeddings(seq, zero_pos, zero_time, None).unwrap();
    assert_eq!(same.tokens.value(), tokens.value());

    let pos = Tensor::new([4, 3], (0..12).map(|v| v as f32).collect()).unwrap();
    let time = Tensor::new([2, 3], vec![100., 200., 300., 400., 500., 600.]).unwrap();
    let out = add_embeddings(seq, g.constant(pos.clone()), g.constant(time), None)
        .unwrap()
        .tokens
        .value();
    // tokens 1 and 3 share τ=0; their difference is pos[1] − pos[3]
    for c in 0..3 {
        assert_eq!(out.row(1)[c] - out.row(3)[c], pos.row(1)[c] - pos.row(3)[c]);
    }
    let cls = g.constant(Tensor::new([1, 3], vec![7., 8., 9.]).unwrap());
    let with = add_embeddings(seq, zero_pos, zero_time, Some(cls)).unwrap();
    assert_eq!(with.len(), 9);
    assert!(with.has_class_token);
    assert_eq!(with.tokens.value().row(0), &[7., 8., 9.]);

    let bad = g.constant(Tensor::zeros([3, 3]).unwrap());
    assert!(add_embeddings(seq, bad, zero_time, None).is_err());
}

#[test]
fn zeroed_output_projections_give_identity() {
    let cfg = small(16, 2);
    let mut store = ParamStore::<f32>::init(&finetune_schema(&cfg).unwrap(), 5).unwrap();
    for (name, t) in store.iter_mut() {
        if name.contains("attn.proj") || name.contains("mlp.fc2") {
            t.data_mut().fill(0.0);
        }
    }
    let g = Graph::new();
    let p = store.bind_frozen(&g);
    let x = g.constant(
        Tensor::new([8, 16], (0..128).map(|i| (i as f32 * 0.37).sin()).collect()).unwrap(),
    );
    let seq = TokenSequence {
        tokens: x,
        grid: cfg.token_grid().unwrap(),
        has_class_token: false,
    };
    let out = encoder_forward(&seq, &p, &cfg).unwrap();
    assert_eq!(out.latent.value(), x.value());
}

#[test]
fn one_block_is_permutation_equivariant() {
    let cfg = small(16, 1);
    let store = ParamStore::<f32>::init(&finetune_schema(&cfg).unwrap(), 6).unwrap();
    let x = Tensor::new([8, 16], (0..128).map(|i| (i as f32 * 0.73).cos()).collect()).unwrap();
    let perm = [5usize, 2, 7, 0, 3, 6, 1, 4];
    let g = Graph::new();
    let p = store.bind_frozen(&g);
    let run = |tokens| {
        let seq = TokenSequence {
            tokens,
            grid: cfg.token_grid().unwrap(),
            has_class_token: false,
        };
        encoder_forward(&seq, &p, &cfg).unwrap().latent
    };
    let direct = run(g.constant(x.clone())).value();
    let permuted_out = run(g.constant(x.clone()).gather_rows(&perm).unwrap());
    let mut inverse = [0usize; 8];
    for (j, &i) in perm.iter().enumerate() {
        inverse[i] = j;
    }
    let back = permuted_out.gather_rows(&inverse).unwrap().value();
    assert!(direct.max_abs_diff(&back).unwrap() < 1e-5);
}

#[test]
fn encoder_and_head_gradients_match_finite_differences() {
    let cfg = small(16, 2);
    let report = gradcheck_model(&cfg, 11, &GradcheckOptions::default()).unwrap();
    assert!(
        report.passed(),
        "{:?}",
        &report.failures[..report.failures.len().min(5)]
    );
    assert!(report.checked > 1000);
}

#[test]
fn head_examples() {
    let g = Graph::new();
    let mut store = ParamStore::<f32>::new();
    store.insert("head.weight", Tensor::zeros([3, 1]).unwrap());
    store.insert("head.bias", Tensor::scalar(42.5));
    let p = store.bind_frozen(&g);
    let latent = EncoderOutput {
        latent: g.constant(Tensor::new([2, 3], vec![1., 2., 3., 5., 6., 7.]).unwrap()),
        has_class_token: false,
    };
    assert_eq!(regression_head(&latent, &p).unwrap().item().unwrap(), 42.5);

    let g = Graph::new();
    store.insert(
        "head.weight",
        Tensor::new([3, 1], vec![0., 1., 0.]).unwrap(),
    );
    store.insert("head.bias", Tensor::scalar(0.0));
    let p = store.bind_frozen(&g);
    let one = EncoderOutput {
        latent: g.constant(Tensor::new([1, 3], vec![4., 9., 2.]).unwrap()),
        has_class_token: false,
    };
    assert_eq!(regression_head(&one, &p).unwrap().item().unwrap(), 9.0);

    // mean of rows [1,2,3] and [5,6,7] is [3,4,5]; ·[1,−1,2] + 0.5 = 9.5
    store.insert(
        "head.weight",
        Tensor::new([3, 1], vec![1., -1., 2.]).unwrap(),
    );
    store.insert("head.bias", Tensor::scalar(0.5));
    let g = Graph::new();
    let p = store.bind_frozen(&g);
    let two = EncoderOutput {
        latent: g.constant(Tensor::new([2, 3], vec![1., 2., 3., 5., 6., 7.]).unwrap()),
        has_class_token: false,
    };
    assert!((regression_head(&two, &p).unwrap().item().unwrap() - 9.5).abs() < 1e-6);
    let cls = EncoderOutput {
        has_class_token: true,
        ..two
    };
    // class token row only: 1 − 2 + 6 + 0.5
    assert!((regression_head(&cls, &p).unwrap().item().unwrap() - 5.5).abs() < 1e-6);
}

#[test]
fn prediction_is_deterministic() {
    let cfg = small(16, 1);
    let store = ParamStore::<f32>::init(&finetune_schema(&cfg).unwrap(), 8).unwrap();
    let video = ramp([4, 8, 8]);
    let run = || {
        let g = Graph::new();
        let p = store.bind_frozen(&g);
        predict_ef(g.constant(video.clone()), &cfg, &p)
            .unwrap()
            .item()
            .unwrap()
    };
    assert_eq!(run(), run());
}

#[test]
fn reconstruction_and_op_gradients_match_finite_differences() {
    for (name, report) in echovit::model::gradcheck_suite(3, &GradcheckOptions::default()).unwrap()
    {
        assert!(
            report.passed(),
            "{name}: {:?}",
            &report.failures[..report.failures.len().min(5)]
        );
        assert!(report.checked > 0, "{name}");
    }
}
