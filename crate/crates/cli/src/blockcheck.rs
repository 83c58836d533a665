use std::f64::consts::E;

use anyhow::{bail, Context};
use clap::{Args as ClapArgs, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reasdet_core::blocks::persist::{AnyBlock, BlockSpec};
use reasdet_core::blocks::{
    check_gradients, randomize_params, BottleneckKind, C3Config, Module, ParamKind, RfaConfig,
    SeamConfig, SppfConfig, ToyNet, ToyNetConfig,
};
use reasdet_core::tensor::{Binder, Element, Tensor, Var};

/// Tolerance on the attention-sum and attention-ratio invariants.
const INVARIANT_TOL: f64 = 1e-6;
/// Tolerance on the zero-input channel attention `e^0.5`.
const ZERO_INPUT_TOL: f64 = 1e-5;
const PARAM_SCALE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BlockKind {
    Rfaconv,
    Rfe,
    C3rfem,
    Multiseam,
    Sppf,
    Toynet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Precision {
    F32,
    F64,
}

#[derive(ClapArgs, Debug)]
pub struct Args {
    #[arg(long, value_enum)]
    pub block: BlockKind,

    /// Input shape `NxCxHxW`, or a single extent `E` for `1xCxExE`.
    #[arg(long, default_value = "1x4x8x8")]
    pub size: String,

    /// Element type of the forward pass; gradients are always checked in f64.
    #[arg(long, value_enum, default_value_t = Precision::F64)]
    pub precision: Precision,

    /// Feed zeros and zero every bias.
    #[arg(long)]
    pub zero_input: bool,

    /// Skip the finite-difference gradient check.
    #[arg(long)]
    pub no_grad: bool,

    /// Relative tolerance of the gradient check.
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
}

#[derive(ClapArgs, Debug)]
pub struct NetArgs {
    /// Square input extent; a multiple of 32.
    #[arg(long, default_value_t = 640)]
    pub extent: usize,

    /// Five comma-separated stage widths.
    #[arg(long, value_delimiter = ',', default_value = "8,16,32,64,128")]
    pub widths: Vec<usize>,
}

fn parse_size(s: &str, channels: usize) -> anyhow::Result<[usize; 4]> {
    let dims = s
        .split(['x', 'X'])
        .map(|d| d.trim().parse::<usize>())
        .collect::<Result<Vec<_>, _>>()
        .with_context(|| format!("invalid size {s:?}"))?;
    let shape = match dims[..] {
        [e] => [1, channels, e, e],
        [n, c, h, w] => [n, c, h, w],
        _ => bail!("invalid size {s:?}: expected NxCxHxW or a single extent"),
    };
    if shape.contains(&0) {
        bail!("invalid size {s:?}: every dimension must be positive");
    }
    Ok(shape)
}

fn spec_for(kind: BlockKind, channels: usize) -> BlockSpec {
    match kind {
        BlockKind::Rfaconv => BlockSpec::RfaConv(RfaConfig::new(channels, 3)),
        BlockKind::Rfe => BlockSpec::Rfe { channels },
        BlockKind::C3rfem => {
            BlockSpec::C3Rfem(C3Config::new(channels, channels, BottleneckKind::Rfe))
        }
        BlockKind::Multiseam => BlockSpec::MultiSeam(SeamConfig::new(channels)),
        BlockKind::Sppf => BlockSpec::Sppf(SppfConfig::new(channels, channels)),
        BlockKind::Toynet => unreachable!("the toy network is not a standalone block"),
    }
}

fn make_block(spec: &BlockSpec, seed: u64, zero_bias: bool) -> anyhow::Result<AnyBlock<f64>> {
    let mut block = spec.build::<f64>(seed)?;
    randomize_params(&mut block, seed, PARAM_SCALE);
    if zero_bias {
        block.visit_params_mut(&mut |p| {
            if matches!(
                p.kind,
                ParamKind::Bias | ParamKind::NormShift | ParamKind::NormMean
            ) {
                p.value.data_mut().fill(0.0);
            }
        });
    }
    Ok(block)
}

/// The same block with every parameter cast to `T`.
fn cast_block<T: Element>(src: &AnyBlock<f64>, seed: u64) -> anyhow::Result<AnyBlock<T>> {
    let mut out = src.spec().build::<T>(seed)?;
    let values: Vec<Tensor<T>> = src.params().iter().map(|p| p.value.cast()).collect();
    let mut it = values.into_iter();
    out.visit_params_mut(&mut |p| {
        if let Some(v) = it.next() {
            p.value = v;
        }
    });
    Ok(out)
}

fn input(shape: [usize; 4], seed: u64, zero: bool) -> Tensor<f64> {
    if zero {
        return Tensor::zeros(shape);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1a2b_3c4d);
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn status(ok: bool) -> &'static str {
    if ok {
        "pass"
    } else {
        "FAIL"
    }
}

/// Forward pass in `T` with shape trace and invariant checks.
fn forward_checks<T: Element>(
    block: &AnyBlock<T>,
    x: &Tensor<T>,
    zero_input: bool,
) -> anyhow::Result<bool> {
    let b = Binder::frozen();
    let xv = Var::constant(x.clone());
    println!("input {:?}", x.shape());
    let mut ok = true;
    match block {
        AnyBlock::RfaConv(m) => {
            let (_, attn) = m.forward_with_attention(&b, &xv)?;
            let attn = attn.into_value();
            println!("attention {:?}", attn.shape());
            let s = attn.shape().to_vec();
            let (kk, plane) = (s[2], s[3] * s[4]);
            let data = attn.data();
            let mut worst = 0.0f64;
            for nc in 0..s[0] * s[1] {
                for p in 0..plane {
                    let sum: f64 = (0..kk)
                        .map(|k| data[(nc * kk + k) * plane + p].as_f64())
                        .sum();
                    worst = worst.max((sum - 1.0).abs());
                }
            }
            let pass = worst <= INVARIANT_TOL;
            println!(
                "attention_sum max_dev {worst:.3e} tolerance {INVARIANT_TOL:.0e} {}",
                status(pass)
            );
            ok &= pass;
        }
        AnyBlock::MultiSeam(m) => {
            let (y, a) = m.forward_with_attention(&b, &xv)?;
            let (y, a) = (y.into_value(), a.into_value());
            println!("attention {:?}", a.shape());
            let vals: Vec<f64> = a.data().iter().map(|v| v.as_f64()).collect();
            let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let pass = lo > 1.0 && hi < E;
            println!(
                "channel_attention min {lo:.6} max {hi:.6} range (1, e) {}",
                status(pass)
            );
            ok &= pass;

            let (_, c, h, w) = x.dims4()?;
            let mut worst = 0.0f64;
            for (i, (xv, yv)) in x.data().iter().zip(y.data()).enumerate() {
                let xv = xv.as_f64();
                if xv.abs() > 1e-3 {
                    let ac = vals[i / (h * w) % c + i / (c * h * w) * c];
                    worst = worst.max((yv.as_f64() / xv - ac).abs());
                }
            }
            let pass = worst <= INVARIANT_TOL;
            println!(
                "ratio max_dev {worst:.3e} tolerance {INVARIANT_TOL:.0e} {}",
                status(pass)
            );
            ok &= pass;

            if zero_input {
                let target = 0.5f64.exp();
                let dev = vals.iter().map(|v| (v - target).abs()).fold(0.0, f64::max);
                let pass = dev <= ZERO_INPUT_TOL;
                println!(
                    "zero_input A_c {target:.6} max_dev {dev:.3e} {}",
                    status(pass)
                );
                ok &= pass;
            }
        }
        _ => {}
    }
    let y = block.forward_bound(&b, &xv)?.into_value();
    println!("output {:?}", y.shape());
    let finite = y.is_finite();
    println!("output_finite {}", status(finite));
    Ok(ok && finite)
}

fn run_toynet(shape: [usize; 4], seed: u64) -> anyhow::Result<bool> {
    let [n, c, h, w] = shape;
    if h != w {
        bail!("the toy network takes square inputs, got {h}x{w}");
    }
    let mut config = ToyNetConfig::new(h);
    config.in_channels = c;
    let net = ToyNet::<f32>::new(config, seed)?;
    println!("input {:?}", [n, c, h, w]);
    let outs = net.forward(&Tensor::zeros([n, c, h, w]))?;
    let mut ok = true;
    for ((out, expected), stride) in outs
        .iter()
        .zip(net.config.head_extents())
        .zip(reasdet_core::blocks::HEAD_STRIDES)
    {
        let s = out.shape();
        println!("head stride {stride} {:?} {}x{}", s, s[2], s[3]);
        ok &= s[2] == expected && s[3] == expected;
    }
    println!("params {}", net.param_count());
    println!("head_shapes {}", status(ok));
    Ok(ok)
}

pub fn run(args: &Args, seed: u64) -> crate::Outcome {
    if args.tolerance.is_nan() || args.tolerance <= 0.0 {
        bail!("--tolerance must be positive");
    }
    let default_channels = if args.block == BlockKind::Toynet {
        3
    } else {
        4
    };
    let shape = parse_size(&args.size, default_channels)?;
    let name = args
        .block
        .to_possible_value()
        .map(|v| v.get_name().to_owned())
        .unwrap_or_default();
    println!("block {name} seed {seed}");
    if args.block == BlockKind::Toynet {
        return run_toynet(shape, seed);
    }

    let spec = spec_for(args.block, shape[1]);
    let block = make_block(&spec, seed, args.zero_input)?;
    println!("params {}", block.param_count());
    let x = input(shape, seed, args.zero_input);
    let mut ok = match args.precision {
        Precision::F64 => forward_checks(&block, &x, args.zero_input)?,
        Precision::F32 => forward_checks(
            &cast_block::<f32>(&block, seed)?,
            &x.cast(),
            args.zero_input,
        )?,
    };

    if args.no_grad {
        println!("gradient_check skipped");
    } else {
        let report = check_gradients(&block, &x, args.tolerance)?;
        println!("gradient_check\n{report}");
        ok &= report.pass;
    }
    println!("result {}", status(ok));
    Ok(ok)
}

pub fn run_net(args: &NetArgs, seed: u64) -> crate::Outcome {
    let widths: [usize; 5] = args
        .widths
        .clone()
        .try_into()
        .map_err(|w: Vec<usize>| anyhow::anyhow!("expected 5 widths, got {}", w.len()))?;
    let mut config = ToyNetConfig::new(args.extent);
    config.widths = widths;
    let net = ToyNet::<f32>::new(config, seed)?;
    let outs = net.forward(&Tensor::zeros([1, 3, args.extent, args.extent]))?;
    for (out, stride) in outs.iter().zip(reasdet_core::blocks::HEAD_STRIDES) {
        let s = out.shape();
        println!(
            "P{} stride {stride} {}x{} {:?}",
            stride.trailing_zeros(),
            s[2],
            s[3],
            s
        );
    }
    println!("params {}", net.param_count());
    Ok(true)
}
