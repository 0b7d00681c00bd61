fn main() {
    std::process::exit(eeg_deformer::cli::run());
}
