fn main() {
    std::process::exit(gradeconf::cli::run(std::env::args_os()));
}
