fn main() -> std::process::ExitCode {
    auvgeom::cli::main_entry()
}
