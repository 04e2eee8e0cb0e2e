// Parse, execute and canonicalize a ChartLang program, then break it.

use chartloop::chartlang::{detokenize, execute, parse, run_code, tokenize};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let src = "LAYOUT 1 2 \
               SUBPLOT 1 TYPE pie COLOR navy DATA 3.0 1.0 END \
               SUBPLOT 0 TYPE bar COLOR red TITLE sales GRID DATA 1.0 2.0 4.0 END";
    let program = parse(&tokenize(src)?)?;
    let elements = execute(&program)?;
    println!("program:   {program}");
    println!("canonical: {}", detokenize(&program.canonicalize()));
    println!("layout {:?}, types {:?}, colors {:?}", elements.layout, elements.types(), elements.colors());

    // the same chart with its subplots written in the other order
    let swapped = parse(&tokenize(
        "LAYOUT 1 2 SUBPLOT 0 TYPE bar COLOR red TITLE sales GRID DATA 1.0 2.0 4.0 END \
         SUBPLOT 1 TYPE pie COLOR navy DATA 3.0 1.0 END",
    )?)?;
    assert_eq!(swapped.canonicalize(), program.canonicalize());

    for broken in [
        "LAYOUT 1 1 SUBPLOT 3 TYPE bar COLOR red DATA 1.0 END",
        "LAYOUT 1 2 SUBPLOT 0 TYPE bar COLOR red DATA 1.0 END SUBPLOT 0 TYPE pie COLOR red DATA 1.0 END",
        "LAYOUT 1 1 SUBPLOT 0 TYPE bar COLOR red END",
        "LAYOUT 1 SUBPLOT",
    ] {
        let err = run_code(&tokenize(broken)?).unwrap_err();
        println!("{:<9} {}", err.code.to_string(), err.message);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
