// Generate a task corpus, corrupt a reference program, and round-trip the
// split through its JSONL file.

use chartloop::data::{corrupt, generate_split, read_tasks, write_tasks, Difficulty, DifficultyMix, Split, Task};
use chartloop::rewards::rule_reward;

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let tasks = generate_split(0, Split::Train, 50, &DifficultyMix::default());
    let hard = tasks.iter().filter(|t| t.difficulty == Difficulty::Hard).count();
    println!("{} tasks, {hard} hard", tasks.len());

    let task = Task::generate(17, Difficulty::Medium);
    println!("reference: {}", task.program);
    for edits in 1..=3 {
        let c = corrupt(&task.program, edits, 5);
        let rule = rule_reward(chartloop::chartlang::execute(&c).as_ref(), &task.reference).rule;
        println!("{edits} edit(s), rule {rule:.3}: {c}");
    }

    let dir = std::env::temp_dir().join(format!("chartloop-corpus-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("train.jsonl");
    write_tasks(&path, &tasks)?;
    assert_eq!(read_tasks(&path)?, tasks);
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
