use std::process::exit;

fn main() {
    exit(switchctrl::cli::run());
}
