//! Two-column plot data files: a `#` comment naming the columns, then one
//! whitespace-separated pair per line.

use std::io::{self, Write};

pub fn write_columns<W, I>(mut out: W, x_label: &str, y_label: &str, rows: I) -> io::Result<()>
where
    W: Write,
    I: IntoIterator<Item = (f64, f64)>,
{
    writeln!(out, "# {x_label} {y_label}")?;
    for (x, y) in rows {
        writeln!(out, "{x} {y}")?;
    }
    out.flush()
}
