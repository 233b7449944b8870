//! Serves one seeded toy model over stdio or TCP.

use std::io::Write;
use std::net::TcpListener;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use gmfim_core::image::Shape;
use gmfim_core::model::{ModelSpec, Role, ToyModel};
use gmfim_wire::{serve, ServeOptions, PROTOCOL_VERSION};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Transport {
    Stdio,
    Tcp,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum RoleArg {
    Generator,
    Perceptual,
    Identity,
}

#[derive(Debug, Parser)]
#[command(version, about = "Serve a deterministic toy model over the model wire protocol")]
struct Args {
    #[arg(long, value_enum, default_value = "stdio")]
    transport: Transport,
    /// TCP port on 127.0.0.1; 0 picks a free port, printed on stdout.
    #[arg(long, default_value_t = 0)]
    port: u16,
    #[arg(long, value_enum, default_value = "identity")]
    role: RoleArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 16)]
    latent_dim: usize,
    /// `N`, `HxW` or `HxWxC`; channels default to 3.
    #[arg(long, default_value = "8")]
    image_size: String,
    /// Feature length of an extractor.
    #[arg(long, default_value_t = 16)]
    features: usize,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    gain: Option<f64>,
    /// Answer VJP requests with an error.
    #[arg(long)]
    no_vjp: bool,
    #[arg(long, default_value_t = PROTOCOL_VERSION)]
    protocol_version: u32,
    #[arg(long)]
    quiet: bool,
}

fn parse_size(text: &str) -> Result<Shape, String> {
    let parts: Vec<usize> = text
        .split('x')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("bad image size {text:?}: {e}")))
        .collect::<Result<_, _>>()?;
    match parts[..] {
        [n] => Ok(Shape::new(n, n, 3)),
        [h, w] => Ok(Shape::new(h, w, 3)),
        [h, w, c] => Ok(Shape::new(h, w, c)),
        _ => Err(format!("bad image size {text:?}")),
    }
}

fn build(args: &Args) -> Result<ToyModel, String> {
    let shape = parse_size(&args.image_size)?;
    let mut spec = match args.role {
        RoleArg::Generator => ModelSpec::toy_generator(args.latent_dim, shape, args.seed),
        RoleArg::Perceptual => ModelSpec::toy_extractor(Role::Perceptual, shape, args.features, args.seed),
        RoleArg::Identity => ModelSpec::toy_extractor(Role::Identity, shape, args.features, args.seed),
    };
    if let Some(h) = args.hidden {
        spec = spec.with_hidden(h);
    }
    if let Some(g) = args.gain {
        spec = spec.with_gain(g);
    }
    ToyModel::new(spec).map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let args = Args::parse();
    let model = match build(&args) {
        Ok(m) => m,
        Err(e) => {
            eprintln!("gmfim-toyserver: {e}");
            return ExitCode::from(2);
        }
    };
    let opts = ServeOptions {
        version: args.protocol_version,
        vjp: !args.no_vjp,
        log_frames: !args.quiet,
    };
    let result = match args.transport {
        Transport::Stdio => serve(std::io::stdin().lock(), std::io::stdout().lock(), &model, &opts).map(|_| ()),
        Transport::Tcp => (|| {
            let listener = TcpListener::bind(("127.0.0.1", args.port))?;
            let addr = listener.local_addr()?;
            println!("{addr}");
            std::io::stdout().flush()?;
            loop {
                let summary = gmfim_wire::serve_tcp_once(&listener, &model, &opts)?;
                if summary.shutdown {
                    return Ok(());
                }
            }
        })(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("gmfim-toyserver: {e}");
            ExitCode::FAILURE
        }
    }
}
