fn main() {
    eprintln!("sembid: command surface not wired yet");
    std::process::exit(2);
}
