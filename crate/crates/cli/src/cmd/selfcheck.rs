use anyhow::Result;
use clap::{Args, ValueEnum};
use rotdet_core::selfcheck::{run_all, Fault, SelfCheckOptions};

use crate::failure::Failure;
use crate::Context;

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum InjectedFault {
    ProbiouGradSign,
}

#[derive(Debug, Args)]
pub struct SelfcheckArgs {
    /// Monte Carlo samples per IoU comparison.
    #[arg(long, default_value_t = 1_000_000)]
    mc_samples: usize,

    /// Deliberately break a kernel to exercise the harness.
    #[arg(long, value_enum, hide = true)]
    inject_fault: Option<InjectedFault>,
}

pub fn run(ctx: &Context, args: &SelfcheckArgs) -> Result<()> {
    let opts = SelfCheckOptions {
        seed: ctx.seed,
        fault: match args.inject_fault {
            Some(InjectedFault::ProbiouGradSign) => Fault::ProbiouGradSign,
            None => Fault::None,
        },
        mc_samples: args.mc_samples.max(1),
    };
    let outcomes = run_all(&opts);
    for o in &outcomes {
        println!("{o}");
    }
    let failed: Vec<&str> = outcomes.iter().filter(|o| !o.passed).map(|o| o.name).collect();
    println!("{}/{} checks passed", outcomes.len() - failed.len(), outcomes.len());
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Check(failed.join(", ")).into())
    }
}
