//! Household pick-and-place world with six task families.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

use super::{
    task_rng, EnvError, EnvId, EnvSpec, LastOutcome, StepOutcome, ThinkFacts, NOTHING_HAPPENED,
};

pub const GRIDHOUSE_FAMILIES: [&str; 6] =
    ["pick_place", "examine", "clean", "heat", "cool", "pick_two"];

const ROOMS: [&str; 5] = ["hallway", "kitchen", "bathroom", "bedroom", "livingroom"];

/// `(name, room index)` for receptacles that can hold objects.
const RECEPTACLES: [(&str, usize); 16] = [
    ("sidetable", 0),
    ("shelf", 0),
    ("countertop", 1),
    ("cabinet", 1),
    ("diningtable", 1),
    ("toilet", 2),
    ("bathtub", 2),
    ("vanity", 2),
    ("bed", 3),
    ("dresser", 3),
    ("drawer", 3),
    ("desk", 3),
    ("sofa", 4),
    ("armchair", 4),
    ("coffeetable", 4),
    ("tvstand", 4),
];

const LAMPS: [(&str, usize); 2] = [("desklamp", 3), ("floorlamp", 4)];
const KITCHEN: usize = 1;

const SMALL_THINGS: [&str; 12] = [
    "book",
    "pen",
    "cd",
    "keychain",
    "watch",
    "vase",
    "pillow",
    "remote",
    "cellphone",
    "creditcard",
    "candle",
    "statue",
];
const FOOD_AND_DISHES: [&str; 12] = [
    "apple", "mug", "plate", "cup", "bowl", "potato", "tomato", "egg", "bread", "lettuce", "pan",
    "knife",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Family {
    PickPlace,
    Examine,
    Clean,
    Heat,
    Cool,
    PickTwo,
}

impl Family {
    fn from_index(i: usize) -> Self {
        [
            Family::PickPlace,
            Family::Examine,
            Family::Clean,
            Family::Heat,
            Family::Cool,
            Family::PickTwo,
        ][i % 6]
    }

    fn name(self) -> &'static str {
        GRIDHOUSE_FAMILIES[self as usize]
    }

    /// Appliance and resulting adjective for the processing families.
    fn treatment(self) -> Option<(&'static str, &'static str, &'static str)> {
        match self {
            Family::Clean => Some(("clean", "sinkbasin", "clean")),
            Family::Heat => Some(("heat", "microwave", "hot")),
            Family::Cool => Some(("cool", "fridge", "cold")),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Place {
    On(usize),
    Held,
}

#[derive(Debug, Clone, PartialEq)]
struct Object {
    name: &'static str,
    place: Place,
    treated: bool,
    /// Counts toward the goal.
    target: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridHouse {
    task_id: usize,
    seed: u64,
    family: Family,
    objects: Vec<Object>,
    goal_receptacle: usize,
    lamp: usize,
    room: usize,
    lamp_on: bool,
    steps: usize,
    success: bool,
    last: LastOutcome,
    instruction: String,
}

impl GridHouse {
    pub(super) fn new(task_id: usize, seed: u64) -> (Self, String) {
        let mut rng = task_rng(task_id, seed, 0x6A);
        let family = Family::from_index(task_id);
        let pool: &[&str] = match family {
            Family::Clean | Family::Heat | Family::Cool => &FOOD_AND_DISHES,
            _ => &SMALL_THINGS,
        };
        let target_name = *pool.choose(&mut rng).expect("non-empty pool");
        let n_targets = if family == Family::PickTwo { 2 } else { 1 };

        let mut spots: Vec<usize> = (0..RECEPTACLES.len()).collect();
        spots.shuffle(&mut rng);
        let goal_receptacle = spots.pop().expect("enough receptacles");
        let mut objects = Vec::new();
        for _ in 0..n_targets {
            objects.push(Object {
                name: target_name,
                place: Place::On(spots.pop().expect("enough receptacles")),
                treated: false,
                target: true,
            });
        }
        let mut others: Vec<&str> = SMALL_THINGS
            .iter()
            .chain(FOOD_AND_DISHES.iter())
            .copied()
            .filter(|n| *n != target_name)
            .collect();
        others.shuffle(&mut rng);
        let n_distractors = rng.random_range(1..=3);
        for name in others.into_iter().take(n_distractors) {
            objects.push(Object {
                name,
                place: Place::On(spots.pop().expect("enough receptacles")),
                treated: false,
                target: false,
            });
        }
        let lamp = rng.random_range(0..LAMPS.len());

        let (recep, room) = RECEPTACLES[goal_receptacle];
        let instruction = match family {
            Family::PickPlace => format!("put {target_name} in {} {recep}", ROOMS[room]),
            Family::Examine => format!("examine {target_name} under {}", LAMPS[lamp].0),
            Family::PickTwo => format!("put two {target_name} in {} {recep}", ROOMS[room]),
            f => {
                let (_, _, adj) = f.treatment().expect("treatment family");
                format!("put {adj} {target_name} in {} {recep}", ROOMS[room])
            }
        };

        let env = Self {
            task_id,
            seed,
            family,
            objects,
            goal_receptacle,
            lamp,
            room: 0,
            lamp_on: false,
            steps: 0,
            success: false,
            last: LastOutcome::Start,
            instruction,
        };

        let mut hints: Vec<String> = env
            .objects
            .iter()
            .map(|o| match o.place {
                Place::On(r) => format!("{} is in {} .", o.name, ROOMS[RECEPTACLES[r].1]),
                Place::Held => unreachable!("nothing is held at reset"),
            })
            .collect();
        hints.shuffle(&mut rng);
        let first = format!("you are in hallway . {}", hints.join(" "));
        (env, first)
    }

    pub fn spec(&self) -> EnvSpec {
        EnvSpec::new(EnvId::GridHouse, self.task_id, self.seed)
    }

    pub fn instruction(&self) -> &str {
        &self.instruction
    }

    pub fn family(&self) -> &'static str {
        self.family.name()
    }

    pub fn done(&self) -> bool {
        self.success || self.steps >= EnvId::GridHouse.max_steps()
    }

    pub fn success(&self) -> bool {
        self.success
    }

    pub fn score(&self) -> f64 {
        if self.success {
            1.0
        } else {
            0.0
        }
    }

    pub fn step_counter(&self) -> usize {
        self.steps
    }

    fn held(&self) -> Option<usize> {
        self.objects.iter().position(|o| o.place == Place::Held)
    }

    fn room_of(recep: usize) -> usize {
        RECEPTACLES[recep].1
    }

    fn describe_room(&self, lead: &str) -> String {
        let mut s = format!("{lead} {} .", ROOMS[self.room]);
        let here: Vec<String> = self
            .objects
            .iter()
            .filter_map(|o| match o.place {
                Place::On(r) if Self::room_of(r) == self.room => {
                    Some(format!("{} on {}", o.name, RECEPTACLES[r].0))
                }
                _ => None,
            })
            .collect();
        if here.is_empty() {
            s.push_str(" you see nothing .");
        } else {
            s.push_str(&format!(" you see {} .", here.join(" , ")));
        }
        s
    }

    pub fn admissible_actions(&self) -> Vec<String> {
        if self.done() {
            return Vec::new();
        }
        let mut acts = vec!["look".to_string()];
        for (i, room) in ROOMS.iter().enumerate() {
            if i != self.room {
                acts.push(format!("go to {room}"));
            }
        }
        match self.held() {
            None => {
                for o in &self.objects {
                    if let Place::On(r) = o.place {
                        if Self::room_of(r) == self.room {
                            acts.push(format!("take {} from {}", o.name, RECEPTACLES[r].0));
                        }
                    }
                }
            }
            Some(h) => {
                let name = self.objects[h].name;
                for (recep, room) in RECEPTACLES {
                    if room == self.room {
                        acts.push(format!("put {name} in {recep}"));
                    }
                }
                if self.room == KITCHEN {
                    for f in [Family::Clean, Family::Heat, Family::Cool] {
                        let (verb, appliance, _) = f.treatment().expect("treatment family");
                        acts.push(format!("{verb} {name} with {appliance}"));
                    }
                }
            }
        }
        for (lamp, room) in LAMPS {
            if room == self.room {
                acts.push(format!("use {lamp}"));
            }
        }
        acts.dedup();
        acts
    }

    pub fn step(&mut self, action: &str) -> Result<StepOutcome, EnvError> {
        if self.done() {
            return Err(EnvError::EpisodeFinished);
        }
        self.steps += 1;
        let action = action.split_whitespace().collect::<Vec<_>>().join(" ");
        let observation = match self.apply(&action) {
            Some(obs) => {
                self.last = LastOutcome::Worked;
                obs
            }
            None => {
                self.last = LastOutcome::NoEffect;
                NOTHING_HAPPENED.to_string()
            }
        };
        if !self.success {
            self.success = self.goal_met();
        }
        Ok(StepOutcome {
            observation,
            admissible_actions: self.admissible_actions(),
            done: self.done(),
            score: self.score(),
        })
    }

    /// Applies an admissible action; `None` leaves the world untouched.
    fn apply(&mut self, action: &str) -> Option<String> {
        if !self.admissible_actions().iter().any(|a| a == action) {
            return None;
        }
        let words: Vec<&str> = action.split(' ').collect();
        match words.as_slice() {
            ["look"] => Some(self.describe_room("you are in")),
            ["go", "to", room] => {
                self.room = ROOMS.iter().position(|r| r == room)?;
                Some(self.describe_room("you arrive at"))
            }
            ["take", obj, "from", recep] => {
                let r = RECEPTACLES.iter().position(|(n, _)| n == recep)?;
                let i = self
                    .objects
                    .iter()
                    .position(|o| o.name == *obj && o.place == Place::On(r))?;
                self.objects[i].place = Place::Held;
                Some(format!("you take {obj} from {recep} ."))
            }
            ["put", obj, "in", recep] => {
                let r = RECEPTACLES.iter().position(|(n, _)| n == recep)?;
                let i = self.held()?;
                self.objects[i].place = Place::On(r);
                Some(format!("you put {obj} in {recep} ."))
            }
            [verb, obj, "with", appliance] => {
                let i = self.held()?;
                let fam = [Family::Clean, Family::Heat, Family::Cool]
                    .into_iter()
                    .find(|f| f.treatment().map(|t| t.0) == Some(*verb))?;
                let (_, _, adj) = fam.treatment()?;
                // Treatments overwrite one another: the last one applied is the state.
                self.objects[i].treated = fam == self.family;
                Some(format!(
                    "you {verb} {obj} with {appliance} . {obj} is now {adj} ."
                ))
            }
            ["use", lamp] => {
                let l = LAMPS.iter().position(|(n, _)| n == lamp)?;
                if l == self.lamp {
                    self.lamp_on = true;
                }
                let mut s = format!("you turn on {lamp} .");
                if let Some(h) = self.held() {
                    s.push_str(&format!(
                        " you look at {} under the light .",
                        self.objects[h].name
                    ));
                }
                Some(s)
            }
            _ => None,
        }
    }

    fn goal_met(&self) -> bool {
        match self.family {
            Family::Examine => {
                self.lamp_on
                    && self.room == LAMPS[self.lamp].1
                    && self.held().is_some_and(|h| self.objects[h].target)
            }
            _ => self
                .objects
                .iter()
                .filter(|o| o.target)
                .all(|o| self.placed(o)),
        }
    }

    fn needs_treatment(&self) -> bool {
        self.family.treatment().is_some()
    }

    fn placed(&self, o: &Object) -> bool {
        o.place == Place::On(self.goal_receptacle) && (!self.needs_treatment() || o.treated)
    }

    /// Next action on a shortest path plus the fact that decides it.
    fn plan(&self) -> (String, String) {
        if let Some(h) = self.held() {
            let o = &self.objects[h];
            if !o.target {
                let (recep, _) = RECEPTACLES
                    .iter()
                    .find(|(_, r)| *r == self.room)
                    .expect("every room has a receptacle");
                return (
                    format!("put {} in {recep}", o.name),
                    format!("{} is not needed", o.name),
                );
            }
            if self.family == Family::Examine {
                let (lamp, lroom) = LAMPS[self.lamp];
                return if self.room == lroom {
                    (format!("use {lamp}"), format!("{lamp} is here"))
                } else {
                    (
                        format!("go to {}", ROOMS[lroom]),
                        format!("{lamp} is in {}", ROOMS[lroom]),
                    )
                };
            }
            if let Some((verb, appliance, adj)) = self.family.treatment() {
                if !o.treated {
                    return if self.room == KITCHEN {
                        (
                            format!("{verb} {} with {appliance}", o.name),
                            format!("{} must be {adj}", o.name),
                        )
                    } else {
                        (
                            "go to kitchen".to_string(),
                            format!("{appliance} is in kitchen"),
                        )
                    };
                }
            }
            let (recep, groom) = RECEPTACLES[self.goal_receptacle];
            return if self.room == groom {
                (
                    format!("put {} in {recep}", o.name),
                    format!("{recep} is here"),
                )
            } else {
                (
                    format!("go to {}", ROOMS[groom]),
                    format!("{recep} is in {}", ROOMS[groom]),
                )
            };
        }
        let next = self
            .objects
            .iter()
            .find(|o| o.target && !self.placed(o))
            .expect("an unfinished episode has an unplaced target");
        let Place::On(r) = next.place else {
            unreachable!("nothing is held")
        };
        let (recep, room) = RECEPTACLES[r];
        if room == self.room {
            (
                format!("take {} from {recep}", next.name),
                format!("{} is on {recep}", next.name),
            )
        } else {
            (
                format!("go to {}", ROOMS[room]),
                format!("{} is in {}", next.name, ROOMS[room]),
            )
        }
    }

    pub fn oracle_action(&self) -> Result<String, EnvError> {
        if self.done() {
            return Err(EnvError::EpisodeFinished);
        }
        Ok(self.plan().0)
    }

    pub fn think_facts(&self) -> ThinkFacts {
        let key_fact = if self.done() {
            String::new()
        } else {
            self.plan().1
        };
        ThinkFacts {
            location: ROOMS[self.room].to_string(),
            holding: self
                .held()
                .map(|h| self.objects[h].name.to_string())
                .into_iter()
                .collect(),
            goal: self.instruction.clone(),
            key_fact,
            last_outcome: self.last,
        }
    }
}

pub(super) fn words() -> Vec<&'static str> {
    let mut w: Vec<&'static str> = vec![
        "you",
        "are",
        "in",
        "arrive",
        "at",
        "see",
        "nothing",
        "on",
        "take",
        "from",
        "put",
        "with",
        "is",
        "now",
        "use",
        "turn",
        "look",
        "under",
        "the",
        "light",
        "go",
        "to",
        "two",
        "examine",
        "clean",
        "heat",
        "cool",
        "hot",
        "cold",
        "must",
        "be",
        "here",
        "not",
        "needed",
        "Nothing",
        "happened",
        "sinkbasin",
        "microwave",
        "fridge",
    ];
    w.extend(ROOMS);
    w.extend(RECEPTACLES.iter().map(|(n, _)| *n));
    w.extend(LAMPS.iter().map(|(n, _)| *n));
    w.extend(SMALL_THINGS);
    w.extend(FOOD_AND_DISHES);
    w
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{oracle_solution, reset, EnvState};

    fn gh(task: usize, seed: u64) -> GridHouse {
        match reset(&EnvSpec::new(EnvId::GridHouse, task, seed))
            .unwrap()
            .0
        {
            EnvState::GridHouse(g) => g,
            _ => unreachable!(),
        }
    }

    #[test]
    fn reset_is_deterministic() {
        let a = reset(&EnvSpec::new(EnvId::GridHouse, 0, 7)).unwrap();
        let b = reset(&EnvSpec::new(EnvId::GridHouse, 0, 7)).unwrap();
        assert_eq!(a.1, b.1);
        assert_eq!(a.2, b.2);
        assert!(a.2.starts_with("you are in hallway ."));
    }

    #[test]
    fn inadmissible_action_changes_nothing_but_the_counter() {
        let mut g = gh(0, 7);
        let before = g.clone();
        let out = g.step("fly to the moon").unwrap();
        assert_eq!(out.observation, NOTHING_HAPPENED);
        assert_eq!(g.steps, 1);
        assert_eq!(g.objects, before.objects);
        assert_eq!(g.room, before.room);
    }

    #[test]
    fn step_limit_ends_the_episode() {
        let mut g = gh(3, 1);
        for i in 0..30 {
            let out = g.step("look").unwrap();
            assert_eq!(out.done, i == 29);
            assert_eq!(out.score, 0.0);
        }
        assert_eq!(g.step("look"), Err(EnvError::EpisodeFinished));
        assert_eq!(g.oracle_action(), Err(EnvError::EpisodeFinished));
    }

    #[test]
    fn oracle_is_admissible_and_solves_every_task() {
        for task in 0..EnvId::GridHouse.suite_size() {
            let mut g = gh(task, 11);
            while !g.done() {
                let a = g.oracle_action().unwrap();
                assert!(g.admissible_actions().contains(&a), "task {task}: {a}");
                g.step(&a).unwrap();
            }
            assert!(g.success(), "task {task}");
            assert_eq!(g.score(), 1.0);
        }
    }

    #[test]
    fn every_family_is_short() {
        for task in 0..60 {
            let n = oracle_solution(&EnvSpec::new(EnvId::GridHouse, task, 5))
                .unwrap()
                .len();
            assert!((2..=20).contains(&n), "task {task} len {n}");
        }
    }

    #[test]
    fn heat_requires_the_treatment() {
        let task = (0..600).find(|t| t % 6 == 3).unwrap();
        let mut g = gh(task, 2);
        // put the object at the goal without heating it: no success
        let target = g.objects.iter().position(|o| o.target).unwrap();
        let Place::On(r) = g.objects[target].place else {
            unreachable!()
        };
        g.step(&format!("go to {}", ROOMS[RECEPTACLES[r].1]))
            .unwrap();
        g.step(&format!(
            "take {} from {}",
            g.objects[target].name, RECEPTACLES[r].0
        ))
        .unwrap();
        let (recep, room) = RECEPTACLES[g.goal_receptacle];
        g.step(&format!("go to {}", ROOMS[room])).unwrap();
        let out = g
            .step(&format!("put {} in {recep}", g.objects[target].name))
            .unwrap();
        assert!(!out.done);
        assert_eq!(out.score, 0.0);
    }

    #[test]
    fn words_cover_all_observations() {
        let vocab: std::collections::HashSet<&str> = words().into_iter().collect();
        for task in 0..120 {
            let (mut env, instr, obs) = reset(&EnvSpec::new(EnvId::GridHouse, task, 3)).unwrap();
            let mut texts = vec![instr, obs];
            while !env.done() {
                let a = env.oracle_action().unwrap();
                texts.extend(env.admissible_actions());
                texts.push(env.think_facts().key_fact);
                texts.push(env.step(&a).unwrap().observation);
            }
            for t in texts {
                for w in crate::format::tokenize(&t) {
                    assert!(
                        vocab.contains(w.as_str())
                            || crate::format::PUNCTUATION
                                .iter()
                                .any(|p| w == p.to_string()),
                        "{w:?} in {t:?}"
                    );
                }
            }
        }
    }
}
