use std::process::ExitCode;

use monobo::bench::{
    baseline_seed, build_problem, parse_cli, random_search_baseline, run_benchmark, CliCommand, RunConfig,
    RESULTS_FILE, SUMMARY_FILE,
};

fn main() -> ExitCode {
    let cli = match parse_cli(std::env::args_os()) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match cli.command {
        CliCommand::Run(args) => {
            let config = RunConfig::from(args);
            match run_benchmark(&config) {
                Ok(outcome) => {
                    let s = &outcome.summary;
                    for st in &s.strategies {
                        match st.iterations.last() {
                            Some(last) => println!(
                                "{:<12} trials={:<3} final mean best={:.6} mean rank={:.2} mean-square rank={:.2}",
                                st.strategy.label(),
                                st.trials_completed,
                                last.mean_best_so_far,
                                last.mean_rank,
                                last.mean_square_rank
                            ),
                            None => println!("{:<12} no completed trials", st.strategy.label()),
                        }
                    }
                    println!(
                        "wrote {} and {}",
                        config.out.join(RESULTS_FILE).display(),
                        config.out.join(SUMMARY_FILE).display()
                    );
                    if s.failure_count() > 0 {
                        eprintln!("{} trial(s) failed; see {SUMMARY_FILE}", s.failure_count());
                        return ExitCode::FAILURE;
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(2)
                }
            }
        }
        CliCommand::Baseline(args) => {
            let result = build_problem(&args.problem, args.problem_seed)
                .and_then(|p| random_search_baseline(p.as_ref(), args.n as usize, baseline_seed(args.seed)));
            match result {
                Ok(values) => {
                    for v in values {
                        println!("{v:?}");
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::FAILURE
                }
            }
        }
    }
}
