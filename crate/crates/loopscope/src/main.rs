fn main() {
    std::process::exit(loopscope::cli::main());
}
