use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use autograde_core::harness::{STRICT_VAR, TIMEOUT_VAR, USER_VAR};
use autograde_core::orchestrator::{fail_job, Log};
use autograde_core::sandbox::{minimal_env, DEFAULT_GRADING_USER, EXPOSED_MODE};
use autograde_core::{
    compare_and_record, grade, inspect, run_sandboxed, validate, GraderConfig, LanguageBackend,
    SandboxSpec,
};
use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};

/// External autograder: runs annotated test files against a submission and
/// writes results/results.json into the job directory.
#[derive(Parser)]
#[command(name = "autograde", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Grade the submission in a job directory.
    Grade(GradeArgs),
    /// List the tests of a question with titles and points.
    Inspect(QuestionArgs),
    /// Check a question directory; exits nonzero on errors.
    Validate(QuestionArgs),
    /// Run a command as the grading user with one submission file readable.
    /// Used from inside test files.
    ExecAs(ExecAsArgs),
    /// Compare expected and actual output and print a result record.
    /// Used from inside test files.
    Expect(ExpectArgs),
}

#[derive(Args)]
struct GradeArgs {
    #[arg(long, env = "JOB_DIR")]
    job_dir: Option<PathBuf>,
    /// Built-in backend (sh, bash, python, r) or a command template such as
    /// "node {test_file} {student_file} {answer_file}".
    #[arg(long, default_value = "sh")]
    backend: String,
    #[arg(long, default_value = DEFAULT_GRADING_USER)]
    user: String,
    /// Fail instead of running tests without a privilege drop.
    #[arg(long)]
    strict_isolation: bool,
    /// Date for the daily seed, YYYY-MM-DD.
    #[arg(long)]
    date: Option<String>,
    /// Colorize the log summary.
    #[arg(long)]
    color: bool,
    /// Per-test timeout in seconds; overrides the question's value.
    #[arg(long)]
    timeout: Option<u64>,
    /// Directory of grader files copied next to the tests.
    #[arg(long)]
    assets: Option<PathBuf>,
}

#[derive(Args)]
struct QuestionArgs {
    question_root: PathBuf,
    #[arg(long, default_value = "#")]
    comment_leader: String,
}

#[derive(Args)]
struct ExecAsArgs {
    /// Submission file made readable for the duration of the command.
    file: PathBuf,
    #[arg(long, env = USER_VAR, default_value = DEFAULT_GRADING_USER)]
    user: String,
    #[arg(long, env = TIMEOUT_VAR, default_value_t = 30)]
    timeout: u64,
    #[arg(long, env = STRICT_VAR, value_parser = parse_flag, default_value = "0")]
    strict: bool,
    #[arg(last = true, required = true)]
    command: Vec<String>,
}

#[derive(Args)]
struct ExpectArgs {
    #[arg(long, default_value = "")]
    call: String,
    #[arg(long)]
    expected: String,
    #[arg(long)]
    actual: String,
    #[arg(long)]
    info: Option<String>,
}

fn parse_flag(value: &str) -> Result<bool, String> {
    match value {
        "" | "0" | "false" => Ok(false),
        "1" | "true" => Ok(true),
        other => Err(format!("expected 0 or 1, got `{other}`")),
    }
}

fn run_grade(args: GradeArgs) -> u8 {
    let job_dir = GraderConfig::resolve_job_dir(args.job_dir);
    let mut stderr = io::stderr().lock();
    let setup = || -> Result<GraderConfig, String> {
        let backend = LanguageBackend::parse(&args.backend)
            .map_err(|e| format!("bad --backend `{}`: {e}", args.backend))?;
        let date_override = args
            .date
            .as_deref()
            .map(|d| {
                NaiveDate::parse_from_str(d, "%Y-%m-%d")
                    .map_err(|e| format!("bad --date `{d}`: {e}"))
            })
            .transpose()?;
        let mut config = GraderConfig::new(&job_dir, backend);
        config.grading_user = args.user.clone();
        config.strict_isolation = args.strict_isolation;
        config.date_override = date_override;
        config.color = args.color;
        config.timeout_s = args.timeout;
        config.assets_dir = args.assets.as_ref().map(|a| job_dir.join(a));
        config.helper = std::env::current_exe().ok();
        Ok(config)
    };
    let code = match setup() {
        Ok(config) => grade(&config, &mut stderr),
        Err(reason) => fail_job(&job_dir, &reason, &mut Log::new(&mut stderr, args.color)),
    };
    code as u8
}

fn run_exec_as(args: ExecAsArgs) -> u8 {
    let workdir = match std::env::current_dir() {
        Ok(dir) => dir,
        Err(err) => {
            eprintln!("exec-as: {err}");
            return 125;
        }
    };
    let mut spec = SandboxSpec::new(&workdir, args.command, args.timeout);
    spec.env = minimal_env(&workdir);
    spec.run_as_user = Some(args.user);
    spec.strict = args.strict;
    spec.exposed_files = vec![(args.file, EXPOSED_MODE)];
    // Stay in the test's process group so its timeout reaches us.
    spec.own_process_group = false;
    match run_sandboxed(&spec) {
        Ok(outcome) => {
            let _ = io::stdout().write_all(&outcome.stdout);
            let _ = io::stderr().write_all(&outcome.stderr);
            if outcome.timed_out {
                124
            } else if let Some(code) = outcome.exit_code {
                code as u8
            } else {
                128u8.wrapping_add(outcome.signal.unwrap_or(0) as u8)
            }
        }
        Err(err) => {
            eprintln!("exec-as: {err}");
            125
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Grade(args) => run_grade(args),
        Command::Inspect(args) => {
            inspect(&args.question_root, &args.comment_leader, &mut io::stdout().lock()) as u8
        }
        Command::Validate(args) => {
            validate(&args.question_root, &args.comment_leader, &mut io::stdout().lock()) as u8
        }
        Command::ExecAs(args) => run_exec_as(args),
        Command::Expect(args) => {
            let mut record = compare_and_record(&args.expected, &args.actual, &args.call);
            record.info = args.info;
            println!("{}", record.to_line());
            0
        }
    };
    ExitCode::from(code)
}
