use kernel_hazard::constants::{psi_table, write_psi_table};
use kernel_hazard::kernel::BuiltinKernel;

fn main() {
    let t = std::time::Instant::now();
    let rows = psi_table(&BuiltinKernel::ALL).unwrap();
    write_psi_table(&rows, std::io::stdout()).unwrap();
    eprintln!("{:?}", t.elapsed());
}
