use timebin_epp::cli::run_main;

fn main() {
    std::process::exit(run_main(std::env::args_os()));
}
