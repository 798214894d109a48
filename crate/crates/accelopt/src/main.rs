fn main() {
    std::process::exit(accelopt::run_cli());
}
