//! Science-lab world: rooms behind doors, simple thermal and growth
//! dynamics, and a 100-point ordered subgoal rubric per task.

use std::collections::VecDeque;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

use super::{
    task_rng, EnvError, EnvId, EnvSpec, LastOutcome, StepOutcome, ThinkFacts, NO_KNOWN_ACTION,
};

pub const MINILAB_TYPES: [&str; 9] = [
    "find_living",
    "move_object",
    "boil_water",
    "measure_temp",
    "melt_ice",
    "grow_plant",
    "measure_survey",
    "collect_survey",
    "chemistry_chain",
];

const ROOMS: [&str; 10] = [
    "hallway",
    "kitchen",
    "bedroom",
    "livingroom",
    "bathroom",
    "outside",
    "workshop",
    "artstudio",
    "greenhouse",
    "foundry",
];
const HALLWAY: usize = 0;
const KITCHEN: usize = 1;
const GREENHOUSE: usize = 8;
const DOORS: [(usize, usize); 9] = [
    (0, 1),
    (0, 2),
    (0, 3),
    (1, 4),
    (1, 5),
    (3, 6),
    (6, 7),
    (5, 8),
    (8, 9),
];
/// Rooms at least three doors away from the hallway.
const FAR: [usize; 3] = [7, 8, 9];

const ANIMALS: [&str; 6] = ["frog", "bee", "turtle", "snail", "butterfly", "worm"];
const TRINKETS: [&str; 8] = [
    "shell", "feather", "leaf", "pinecone", "stone", "coin", "key", "bottle",
];
const SUBSTANCES: [&str; 10] = [
    "metal",
    "rock",
    "wax",
    "oil",
    "sand",
    "salt",
    "soap",
    "butter",
    "chocolate",
    "glass",
];

const BOILING_HEAT: u32 = 3;
const MELTING_HEAT: u32 = 2;
const GROWN_AFTER: u32 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Loc {
    Room(usize),
    Inventory,
    In(usize),
    /// Not yet in the world (water before a sink fills a pot).
    Void,
}

#[derive(Debug, Clone, PartialEq)]
struct Item {
    name: &'static str,
    loc: Loc,
    portable: bool,
    container: bool,
    /// `Some(active)` for devices that can be switched.
    switch: Option<bool>,
    temp: u32,
    heat: u32,
    watered: bool,
    growth: u32,
}

impl Item {
    fn new(name: &'static str, loc: Loc) -> Self {
        Self {
            name,
            loc,
            portable: true,
            container: false,
            switch: None,
            temp: 20,
            heat: 0,
            watered: false,
            growth: 0,
        }
    }

    fn fixed(mut self) -> Self {
        self.portable = false;
        self
    }

    fn container(mut self) -> Self {
        self.container = true;
        self
    }

    fn device(mut self) -> Self {
        self.switch = Some(false);
        self
    }

    fn temperature(&self) -> u32 {
        match self.name {
            "steam" => 100,
            "ice" => 0,
            "water" => (20 + 25 * self.heat).min(95),
            _ => self.temp,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Cond {
    Boiling(usize),
    Melted(usize),
    Grown(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Subgoal {
    Enter(usize),
    Hold(usize),
    PutIn(usize, usize),
    Activate(usize),
    Deactivate(usize),
    Measure(usize),
    Focus(usize),
    Wait(Cond),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Event {
    Measured(usize),
    Focused(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MiniLab {
    task_id: usize,
    seed: u64,
    kind: usize,
    items: Vec<Item>,
    open: Vec<bool>,
    room: usize,
    rubric: Vec<(Subgoal, u32)>,
    done_goals: usize,
    points: u32,
    steps: usize,
    event: Option<Event>,
    last: LastOutcome,
    instruction: String,
}

/// Builds a world; `add` returns the new item's index.
struct Builder {
    items: Vec<Item>,
    rubric: Vec<(Subgoal, u32)>,
}

impl Builder {
    fn add(&mut self, item: Item) -> usize {
        self.items.push(item);
        self.items.len() - 1
    }

    fn goal(&mut self, g: Subgoal, pts: u32) {
        self.rubric.push((g, pts));
    }
}

fn pick_rooms(rng: &mut impl Rng, from: &[usize], n: usize) -> Vec<usize> {
    let mut v = from.to_vec();
    v.shuffle(rng);
    v.truncate(n);
    v
}

fn names(list: &[&'static str], rng: &mut impl Rng, n: usize) -> Vec<&'static str> {
    let mut v = list.to_vec();
    v.shuffle(rng);
    v.truncate(n);
    v
}

fn join_list(words: &[&str]) -> String {
    match words {
        [] => String::new(),
        [one] => one.to_string(),
        [init @ .., last] => format!("{} and {last}", init.join(" , ")),
    }
}

impl MiniLab {
    pub(super) fn new(task_id: usize, seed: u64) -> (Self, String) {
        let mut rng = task_rng(task_id, seed, 0x3C);
        let kind = task_id % MINILAB_TYPES.len();
        let mut b = Builder {
            items: Vec::new(),
            rubric: Vec::new(),
        };
        let boxx = b.add(Item::new("box", Loc::Room(HALLWAY)).fixed().container());
        let stove = b.add(
            Item::new("stove", Loc::Room(KITCHEN))
                .fixed()
                .container()
                .device(),
        );
        let sink = b.add(
            Item::new("sink", Loc::Room(KITCHEN))
                .fixed()
                .container()
                .device(),
        );
        let freezer = b.add(Item::new("freezer", Loc::Room(KITCHEN)).fixed().container());
        let not_hall: Vec<usize> = (1..ROOMS.len()).collect();
        let near: Vec<usize> = (1..ROOMS.len())
            .filter(|r| distance(HALLWAY, *r) <= 2)
            .collect();
        let substance = |b: &mut Builder,
                         rng: &mut rand_chacha::ChaCha8Rng,
                         name: &'static str,
                         room: usize| {
            let mut it = Item::new(name, Loc::Room(room));
            it.temp = 5 * rng.random_range(1..=9);
            b.add(it)
        };

        let instruction = match kind {
            0 => {
                let animal = *ANIMALS.choose(&mut rng).expect("animals");
                let room = *not_hall.choose(&mut rng).expect("rooms");
                let a = b.add(Item::new(animal, Loc::Room(room)).fixed());
                b.goal(Subgoal::Enter(room), 50);
                b.goal(Subgoal::Focus(a), 50);
                format!("find the {animal} and focus on it")
            }
            1 => {
                let name = *TRINKETS.choose(&mut rng).expect("trinkets");
                let room = *not_hall.choose(&mut rng).expect("rooms");
                let t = b.add(Item::new(name, Loc::Room(room)));
                b.goal(Subgoal::Hold(t), 40);
                b.goal(Subgoal::PutIn(t, boxx), 60);
                format!("move the {name} to the box")
            }
            2 => {
                let rooms = pick_rooms(&mut rng, &FAR, 2);
                let th = b.add(Item::new("thermometer", Loc::Room(rooms[0])));
                let pot = b.add(Item::new("pot", Loc::Room(rooms[1])).container());
                let water = b.add(Item::new("water", Loc::Void).fixed());
                for (g, p) in [
                    (Subgoal::Hold(th), 10),
                    (Subgoal::Hold(pot), 10),
                    (Subgoal::PutIn(pot, sink), 10),
                    (Subgoal::Activate(sink), 10),
                    (Subgoal::Deactivate(sink), 5),
                    (Subgoal::Hold(pot), 5),
                    (Subgoal::PutIn(pot, stove), 10),
                    (Subgoal::Activate(stove), 10),
                    (Subgoal::Wait(Cond::Boiling(water)), 10),
                    (Subgoal::Measure(water), 10),
                    (Subgoal::Focus(water), 10),
                ] {
                    b.goal(g, p);
                }
                "boil water in the pot and measure the steam".to_string()
            }
            3 => {
                let rooms = pick_rooms(&mut rng, &near, 2);
                let name = *SUBSTANCES.choose(&mut rng).expect("substances");
                let th = b.add(Item::new("thermometer", Loc::Room(rooms[0])));
                let s = substance(&mut b, &mut rng, name, rooms[1]);
                b.goal(Subgoal::Hold(th), 30);
                b.goal(Subgoal::Enter(rooms[1]), 20);
                b.goal(Subgoal::Measure(s), 50);
                format!("measure the temperature of the {name}")
            }
            4 => {
                let rooms = pick_rooms(&mut rng, &FAR, 2);
                let th = b.add(Item::new("thermometer", Loc::Room(rooms[0])));
                let pot = b.add(Item::new("pot", Loc::Room(rooms[1])).container());
                let ice = b.add(Item::new("ice", Loc::In(freezer)));
                for (g, p) in [
                    (Subgoal::Hold(th), 10),
                    (Subgoal::Hold(pot), 10),
                    (Subgoal::Hold(ice), 10),
                    (Subgoal::PutIn(ice, pot), 10),
                    (Subgoal::PutIn(pot, stove), 15),
                    (Subgoal::Activate(stove), 15),
                    (Subgoal::Wait(Cond::Melted(ice)), 10),
                    (Subgoal::Deactivate(stove), 5),
                    (Subgoal::Measure(ice), 10),
                    (Subgoal::Focus(ice), 5),
                ] {
                    b.goal(g, p);
                }
                "melt the ice in the pot and measure the water".to_string()
            }
            5 => {
                let rooms = pick_rooms(&mut rng, &[6, 7, 9], 2);
                let seed_item = b.add(Item::new("seed", Loc::Room(rooms[0])));
                let fp = b.add(Item::new("flowerpot", Loc::Room(rooms[1])).container());
                for (g, p) in [
                    (Subgoal::Hold(seed_item), 10),
                    (Subgoal::Hold(fp), 10),
                    (Subgoal::PutIn(seed_item, fp), 10),
                    (Subgoal::PutIn(fp, sink), 10),
                    (Subgoal::Activate(sink), 10),
                    (Subgoal::Deactivate(sink), 10),
                    (Subgoal::Hold(fp), 10),
                    (Subgoal::Enter(GREENHOUSE), 10),
                    (Subgoal::Wait(Cond::Grown(seed_item)), 10),
                    (Subgoal::Focus(seed_item), 10),
                ] {
                    b.goal(g, p);
                }
                "grow a plant from the seed in the greenhouse".to_string()
            }
            6 => {
                let th_room = *FAR.choose(&mut rng).expect("rooms");
                let th = b.add(Item::new("thermometer", Loc::Room(th_room)));
                let rooms = pick_rooms(&mut rng, &not_hall, 7);
                let subs = names(&SUBSTANCES, &mut rng, 7);
                b.goal(Subgoal::Hold(th), 2);
                for (name, room) in subs.iter().zip(&rooms) {
                    let s = substance(&mut b, &mut rng, name, *room);
                    b.goal(Subgoal::Measure(s), 7);
                    b.goal(Subgoal::PutIn(s, boxx), 7);
                }
                format!(
                    "measure the temperature of {} and move them to the box",
                    join_list(&subs)
                )
            }
            7 => {
                let rooms = pick_rooms(&mut rng, &not_hall, 8);
                let things = names(&TRINKETS, &mut rng, 8);
                for (name, room) in things.iter().zip(&rooms) {
                    let t = b.add(Item::new(name, Loc::Room(*room)));
                    b.goal(Subgoal::Hold(t), 5);
                    b.goal(Subgoal::PutIn(t, boxx), 7);
                }
                b.goal(Subgoal::Focus(boxx), 4);
                format!("collect {} in the box", join_list(&things))
            }
            _ => {
                let th_room = *FAR.choose(&mut rng).expect("rooms");
                let th = b.add(Item::new("thermometer", Loc::Room(th_room)));
                let pot_room = *FAR
                    .iter()
                    .filter(|r| **r != th_room)
                    .collect::<Vec<_>>()
                    .choose(&mut rng)
                    .expect("rooms");
                let pot = b.add(Item::new("pot", Loc::Room(*pot_room)).container());
                let rooms = pick_rooms(&mut rng, &not_hall, 6);
                let water = b.add(Item::new("water", Loc::Void).fixed());
                let subs = names(&SUBSTANCES, &mut rng, 6);
                b.goal(Subgoal::Hold(th), 4);
                b.goal(Subgoal::Hold(pot), 4);
                for (name, room) in subs.iter().zip(&rooms) {
                    let s = substance(&mut b, &mut rng, name, *room);
                    b.goal(Subgoal::Hold(s), 4);
                    b.goal(Subgoal::PutIn(s, pot), 4);
                }
                for g in [
                    Subgoal::PutIn(pot, sink),
                    Subgoal::Activate(sink),
                    Subgoal::Deactivate(sink),
                    Subgoal::Hold(pot),
                    Subgoal::PutIn(pot, stove),
                    Subgoal::Activate(stove),
                    Subgoal::Wait(Cond::Boiling(water)),
                    Subgoal::Measure(water),
                    Subgoal::Focus(water),
                    Subgoal::Deactivate(stove),
                    Subgoal::PutIn(pot, boxx),
                ] {
                    b.goal(g, 4);
                }
                format!(
                    "mix {} in the pot , boil it , measure the steam and move the pot to the box",
                    join_list(&subs)
                )
            }
        };
        debug_assert_eq!(b.rubric.iter().map(|(_, p)| p).sum::<u32>(), 100);

        let env = Self {
            task_id,
            seed,
            kind,
            items: b.items,
            open: vec![false; DOORS.len()],
            room: HALLWAY,
            rubric: b.rubric,
            done_goals: 0,
            points: 0,
            steps: 0,
            event: None,
            last: LastOutcome::Start,
            instruction,
        };
        let obs = env.describe_room();
        (env, obs)
    }

    pub fn spec(&self) -> EnvSpec {
        EnvSpec::new(EnvId::MiniLab, self.task_id, self.seed)
    }

    pub fn instruction(&self) -> &str {
        &self.instruction
    }

    pub fn family(&self) -> &'static str {
        MINILAB_TYPES[self.kind]
    }

    pub fn success(&self) -> bool {
        self.done_goals == self.rubric.len()
    }

    pub fn done(&self) -> bool {
        self.success() || self.steps >= EnvId::MiniLab.max_steps()
    }

    pub fn score(&self) -> f64 {
        if self.success() {
            1.0
        } else {
            f64::from(self.points) / 100.0
        }
    }

    pub fn step_counter(&self) -> usize {
        self.steps
    }

    /// Room holding an item (through containers), or `None` when carried or absent.
    fn room_of(&self, i: usize) -> Option<usize> {
        match self.items[i].loc {
            Loc::Room(r) => Some(r),
            Loc::In(c) => self.room_of(c),
            Loc::Inventory | Loc::Void => None,
        }
    }

    fn carried(&self, i: usize) -> bool {
        match self.items[i].loc {
            Loc::Inventory => true,
            Loc::In(c) => self.carried(c),
            _ => false,
        }
    }

    fn visible(&self, i: usize) -> bool {
        self.carried(i) || self.room_of(i) == Some(self.room)
    }

    fn inside(&self, i: usize, container: usize) -> bool {
        match self.items[i].loc {
            Loc::In(c) => c == container || self.inside(c, container),
            _ => false,
        }
    }

    fn find(&self, name: &str) -> Option<usize> {
        self.items
            .iter()
            .position(|it| it.name == name && it.loc != Loc::Void)
    }

    fn door(&self, a: usize, b: usize) -> Option<usize> {
        DOORS
            .iter()
            .position(|&(x, y)| (x, y) == (a, b) || (x, y) == (b, a))
    }

    fn describe_room(&self) -> String {
        let mut s = format!("this room is called {} .", ROOMS[self.room]);
        let here: Vec<&str> = self
            .items
            .iter()
            .filter(|it| it.loc == Loc::Room(self.room))
            .map(|it| it.name)
            .collect();
        if here.is_empty() {
            s.push_str(" you see nothing .");
        } else {
            s.push_str(&format!(" you see {} .", here.join(" , ")));
        }
        for (c, it) in self.items.iter().enumerate() {
            if it.container && self.room_of(c) == Some(self.room) {
                let inner: Vec<&str> = self
                    .items
                    .iter()
                    .filter(|x| x.loc == Loc::In(c))
                    .map(|x| x.name)
                    .collect();
                if !inner.is_empty() {
                    s.push_str(&format!(
                        " the {} contains {} .",
                        it.name,
                        inner.join(" , ")
                    ));
                }
            }
        }
        let exits: Vec<String> = DOORS
            .iter()
            .enumerate()
            .filter_map(|(d, &(a, b))| {
                let other = if a == self.room {
                    b
                } else if b == self.room {
                    a
                } else {
                    return None;
                };
                Some(format!(
                    "{} {}",
                    ROOMS[other],
                    if self.open[d] { "open" } else { "closed" }
                ))
            })
            .collect();
        s.push_str(&format!(" exits : {} .", exits.join(" , ")));
        s
    }

    pub fn admissible_actions(&self) -> Vec<String> {
        if self.done() {
            return Vec::new();
        }
        let mut acts = vec!["look around".to_string(), "wait".to_string()];
        for (d, &(a, b)) in DOORS.iter().enumerate() {
            let other = if a == self.room {
                b
            } else if b == self.room {
                a
            } else {
                continue;
            };
            if self.open[d] {
                acts.push(format!("go to {}", ROOMS[other]));
            } else {
                acts.push(format!("open door to {}", ROOMS[other]));
            }
        }
        let visible: Vec<usize> = (0..self.items.len()).filter(|&i| self.visible(i)).collect();
        let has_thermometer = self
            .find("thermometer")
            .is_some_and(|t| self.items[t].loc == Loc::Inventory);
        for &i in &visible {
            let it = &self.items[i];
            if it.portable && it.loc != Loc::Inventory {
                acts.push(format!("pick up {}", it.name));
            }
            if it.loc == Loc::Inventory {
                for &c in &visible {
                    if c != i
                        && self.items[c].container
                        && !self.inside(c, i)
                        && self.items[i].loc != Loc::In(c)
                    {
                        acts.push(format!("put {} in {}", it.name, self.items[c].name));
                    }
                }
            }
            match it.switch {
                Some(false) => acts.push(format!("activate {}", it.name)),
                Some(true) => acts.push(format!("deactivate {}", it.name)),
                None => {}
            }
            if has_thermometer && it.name != "thermometer" {
                acts.push(format!("use thermometer on {}", it.name));
            }
            acts.push(format!("focus on {}", it.name));
        }
        acts
    }

    pub fn step(&mut self, action: &str) -> Result<StepOutcome, EnvError> {
        if self.done() {
            return Err(EnvError::EpisodeFinished);
        }
        self.steps += 1;
        self.event = None;
        let action = action.split_whitespace().collect::<Vec<_>>().join(" ");
        let observation = match self.apply(&action) {
            Some(obs) => {
                self.last = LastOutcome::Worked;
                obs
            }
            None => {
                self.last = LastOutcome::NoEffect;
                NO_KNOWN_ACTION.to_string()
            }
        };
        self.tick();
        self.advance_rubric();
        Ok(StepOutcome {
            observation,
            admissible_actions: self.admissible_actions(),
            done: self.done(),
            score: self.score(),
        })
    }

    fn apply(&mut self, action: &str) -> Option<String> {
        if !self.admissible_actions().iter().any(|a| a == action) {
            return None;
        }
        let words: Vec<&str> = action.split(' ').collect();
        let item = |name: &str| self.find(name);
        match words.as_slice() {
            ["look", "around"] => Some(self.describe_room()),
            ["wait"] => Some("time passes .".to_string()),
            ["open", "door", "to", room] => {
                let r = ROOMS.iter().position(|x| x == room)?;
                let d = self.door(self.room, r)?;
                self.open[d] = true;
                Some(format!("the door to {room} is now open ."))
            }
            ["go", "to", room] => {
                self.room = ROOMS.iter().position(|x| x == room)?;
                Some(self.describe_room())
            }
            ["pick", "up", name] => {
                let i = item(name)?;
                self.items[i].loc = Loc::Inventory;
                Some(format!("you pick up the {name} ."))
            }
            ["put", name, "in", target] => {
                let (i, c) = (item(name)?, item(target)?);
                self.items[i].loc = Loc::In(c);
                Some(format!("you put the {name} in the {target} ."))
            }
            ["activate", name] => {
                let i = item(name)?;
                self.items[i].switch = Some(true);
                Some(format!("the {name} is now on ."))
            }
            ["deactivate", name] => {
                let i = item(name)?;
                self.items[i].switch = Some(false);
                Some(format!("the {name} is now off ."))
            }
            ["use", "thermometer", "on", name] => {
                let i = item(name)?;
                self.event = Some(Event::Measured(i));
                Some(format!(
                    "the thermometer reads {} degrees .",
                    self.items[i].temperature()
                ))
            }
            ["focus", "on", name] => {
                let i = item(name)?;
                self.event = Some(Event::Focused(i));
                Some(format!("you focus on the {name} ."))
            }
            _ => None,
        }
    }

    /// Advances time: sinks fill and water seeds, stoves heat, seeds grow.
    fn tick(&mut self) {
        let active = |s: &Self, name: &str| {
            s.find(name)
                .is_some_and(|i| s.items[i].switch == Some(true))
        };
        if active(self, "sink") {
            let sink = self.find("sink").expect("sink exists");
            for c in 0..self.items.len() {
                if self.items[c].loc != Loc::In(sink) || !self.items[c].container {
                    continue;
                }
                let has_seed = self
                    .items
                    .iter()
                    .any(|x| x.loc == Loc::In(c) && x.name == "seed");
                if has_seed {
                    for x in self
                        .items
                        .iter_mut()
                        .filter(|x| x.loc == Loc::In(c) && x.name == "seed")
                    {
                        x.watered = true;
                    }
                } else if self.items[c].name == "pot" {
                    let filled = self
                        .items
                        .iter()
                        .any(|x| x.loc == Loc::In(c) && x.name == "water");
                    if let Some(w) = self
                        .items
                        .iter()
                        .position(|x| x.loc == Loc::Void && x.name == "water")
                    {
                        if !filled {
                            self.items[w].loc = Loc::In(c);
                        }
                    }
                }
            }
        }
        if active(self, "stove") {
            let stove = self.find("stove").expect("stove exists");
            for i in 0..self.items.len() {
                if !self.inside(i, stove) || self.items[i].container {
                    continue;
                }
                let it = &mut self.items[i];
                it.heat += 1;
                if it.name == "ice" && it.heat >= MELTING_HEAT {
                    it.name = "water";
                    it.heat = 0;
                } else if it.name == "water" && it.heat >= BOILING_HEAT {
                    it.name = "steam";
                }
            }
        }
        for i in 0..self.items.len() {
            let in_pot =
                matches!(self.items[i].loc, Loc::In(c) if self.items[c].name == "flowerpot");
            let it = &mut self.items[i];
            if it.name == "seed" && it.watered && in_pot {
                it.growth += 1;
                if it.growth >= GROWN_AFTER {
                    it.name = "plant";
                }
            }
        }
    }

    fn holds(&self, g: Subgoal) -> bool {
        match g {
            Subgoal::Enter(r) => self.room == r,
            Subgoal::Hold(i) => self.items[i].loc == Loc::Inventory,
            Subgoal::PutIn(i, c) => self.items[i].loc == Loc::In(c),
            Subgoal::Activate(i) => self.items[i].switch == Some(true),
            Subgoal::Deactivate(i) => self.items[i].switch == Some(false),
            Subgoal::Measure(i) => self.event == Some(Event::Measured(i)),
            Subgoal::Focus(i) => self.event == Some(Event::Focused(i)),
            Subgoal::Wait(Cond::Boiling(i)) => self.items[i].name == "steam",
            Subgoal::Wait(Cond::Melted(i)) => self.items[i].name == "water",
            Subgoal::Wait(Cond::Grown(i)) => self.items[i].name == "plant",
        }
    }

    fn advance_rubric(&mut self) {
        while let Some(&(g, pts)) = self.rubric.get(self.done_goals) {
            if !self.holds(g) {
                break;
            }
            self.points += pts;
            self.done_goals += 1;
        }
    }

    /// Next step toward `target`, opening doors on the way.
    fn navigate(&self, target: usize) -> String {
        let next = first_hop(self.room, target).expect("rooms are connected");
        let d = self
            .door(self.room, next)
            .expect("adjacent rooms share a door");
        if self.open[d] {
            format!("go to {}", ROOMS[next])
        } else {
            format!("open door to {}", ROOMS[next])
        }
    }

    /// Reach an item: pick-up-ready when visible, otherwise walk to it.
    fn approach(&self, i: usize) -> Result<Option<(String, String)>, EnvError> {
        if self.visible(i) {
            return Ok(None);
        }
        let room = self.room_of(i).ok_or(EnvError::NoSolution)?;
        let name = self.items[i].name;
        Ok(Some((
            self.navigate(room),
            format!("{name} is in {}", ROOMS[room]),
        )))
    }

    fn fetch(&self, i: usize) -> Result<(String, String), EnvError> {
        let name = self.items[i].name;
        if let Some(step) = self.approach(i)? {
            return Ok(step);
        }
        Ok((format!("pick up {name}"), format!("{name} is here")))
    }

    fn plan(&self) -> Result<(String, String), EnvError> {
        let &(goal, _) = self
            .rubric
            .get(self.done_goals)
            .ok_or(EnvError::NoSolution)?;
        let name = |i: usize| self.items[i].name;
        match goal {
            Subgoal::Enter(r) => Ok((self.navigate(r), format!("{} is the place", ROOMS[r]))),
            Subgoal::Hold(i) => self.fetch(i),
            Subgoal::PutIn(i, c) => {
                if self.items[i].loc != Loc::Inventory {
                    return self.fetch(i);
                }
                if let Some(step) = self.approach(c)? {
                    return Ok(step);
                }
                Ok((
                    format!("put {} in {}", name(i), name(c)),
                    format!("{} is here", name(c)),
                ))
            }
            Subgoal::Activate(i) | Subgoal::Deactivate(i) => {
                if let Some(step) = self.approach(i)? {
                    return Ok(step);
                }
                let on = self.items[i].switch == Some(true);
                let verb = if on { "deactivate" } else { "activate" };
                Ok((
                    format!("{verb} {}", name(i)),
                    format!("{} is {}", name(i), if on { "on" } else { "off" }),
                ))
            }
            Subgoal::Measure(i) => {
                let th = self.find("thermometer").ok_or(EnvError::NoSolution)?;
                if self.items[th].loc != Loc::Inventory {
                    return self.fetch(th);
                }
                if let Some(step) = self.approach(i)? {
                    return Ok(step);
                }
                Ok((
                    format!("use thermometer on {}", name(i)),
                    "thermometer is ready".to_string(),
                ))
            }
            Subgoal::Focus(i) => {
                if let Some(step) = self.approach(i)? {
                    return Ok(step);
                }
                Ok((
                    format!("focus on {}", name(i)),
                    format!("{} is here", name(i)),
                ))
            }
            Subgoal::Wait(c) => {
                let fact = match c {
                    Cond::Boiling(_) => "water is heating",
                    Cond::Melted(_) => "ice is melting",
                    Cond::Grown(_) => "seed is growing",
                };
                Ok(("wait".to_string(), fact.to_string()))
            }
        }
    }

    pub fn oracle_action(&self) -> Result<String, EnvError> {
        if self.done() {
            return Err(EnvError::EpisodeFinished);
        }
        self.plan().map(|p| p.0)
    }

    pub fn think_facts(&self) -> ThinkFacts {
        let key_fact = if self.done() {
            String::new()
        } else {
            self.plan().map(|p| p.1).unwrap_or_default()
        };
        ThinkFacts {
            location: ROOMS[self.room].to_string(),
            holding: self
                .items
                .iter()
                .filter(|it| it.loc == Loc::Inventory)
                .map(|it| it.name.to_string())
                .collect(),
            goal: self.instruction.clone(),
            key_fact,
            last_outcome: self.last,
        }
    }
}

fn neighbours(r: usize) -> impl Iterator<Item = usize> {
    DOORS.iter().filter_map(move |&(a, b)| {
        if a == r {
            Some(b)
        } else if b == r {
            Some(a)
        } else {
            None
        }
    })
}

/// Breadth-first search over the door graph; returns parents from `from`.
fn bfs(from: usize) -> Vec<Option<usize>> {
    let mut parent = vec![None; ROOMS.len()];
    let mut seen = vec![false; ROOMS.len()];
    seen[from] = true;
    let mut queue = VecDeque::from([from]);
    while let Some(r) = queue.pop_front() {
        for n in neighbours(r) {
            if !seen[n] {
                seen[n] = true;
                parent[n] = Some(r);
                queue.push_back(n);
            }
        }
    }
    parent
}

fn first_hop(from: usize, to: usize) -> Option<usize> {
    if from == to {
        return None;
    }
    let parent = bfs(from);
    let mut cur = to;
    while let Some(p) = parent[cur] {
        if p == from {
            return Some(cur);
        }
        cur = p;
    }
    None
}

fn distance(from: usize, to: usize) -> usize {
    let parent = bfs(from);
    let mut cur = to;
    let mut d = 0;
    while let Some(p) = parent[cur] {
        d += 1;
        cur = p;
    }
    d
}

pub(super) fn words() -> Vec<&'static str> {
    let mut w: Vec<&'static str> = vec![
        "this",
        "room",
        "called",
        "see",
        "nothing",
        "contains",
        "exits",
        "open",
        "closed",
        "look",
        "around",
        "wait",
        "door",
        "go",
        "pick",
        "up",
        "put",
        "in",
        "activate",
        "deactivate",
        "use",
        "thermometer",
        "on",
        "off",
        "focus",
        "the",
        "to",
        "is",
        "now",
        "you",
        "reads",
        "degrees",
        "time",
        "passes",
        "find",
        "and",
        "it",
        "move",
        "boil",
        "water",
        "pot",
        "measure",
        "steam",
        "temperature",
        "of",
        "melt",
        "ice",
        "grow",
        "a",
        "plant",
        "from",
        "seed",
        "them",
        "collect",
        "mix",
        "flowerpot",
        "box",
        "stove",
        "sink",
        "freezer",
        "place",
        "here",
        "ready",
        "heating",
        "melting",
        "growing",
        "No",
        "known",
        "action",
        "matches",
        "that",
        "input",
    ];
    w.extend(ROOMS);
    w.extend(ANIMALS);
    w.extend(TRINKETS);
    w.extend(SUBSTANCES);
    w
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{oracle_solution, reset, tier_of, EnvState, Tier};

    fn lab(task: usize, seed: u64) -> MiniLab {
        match reset(&EnvSpec::new(EnvId::MiniLab, task, seed)).unwrap().0 {
            EnvState::MiniLab(m) => m,
            _ => unreachable!(),
        }
    }

    #[test]
    fn rubrics_sum_to_one_hundred() {
        for task in 0..90 {
            let m = lab(task, 4);
            assert_eq!(
                m.rubric.iter().map(|(_, p)| p).sum::<u32>(),
                100,
                "task {task}"
            );
        }
    }

    #[test]
    fn oracle_is_admissible_and_score_is_monotone() {
        for task in 0..EnvId::MiniLab.suite_size() {
            let mut m = lab(task, 9);
            let mut prev = 0.0;
            while !m.done() {
                let a = m.oracle_action().unwrap();
                assert!(m.admissible_actions().contains(&a), "task {task}: {a}");
                let out = m.step(&a).unwrap();
                assert!(out.score >= prev);
                prev = out.score;
            }
            assert!(m.success(), "task {task} stopped at {}", m.score());
            assert_eq!(m.score(), 1.0);
        }
    }

    #[test]
    fn task_types_land_in_their_tiers() {
        let expected = [
            Tier::Short,
            Tier::Short,
            Tier::Medium,
            Tier::Short,
            Tier::Medium,
            Tier::Medium,
            Tier::Long,
            Tier::Long,
            Tier::Long,
        ];
        for seed in [0, 1, 2] {
            for task in 0..EnvId::MiniLab.suite_size() {
                let n = oracle_solution(&EnvSpec::new(EnvId::MiniLab, task, seed))
                    .unwrap()
                    .len();
                assert_eq!(
                    tier_of(n),
                    expected[task % 9],
                    "task {task} seed {seed} len {n}"
                );
            }
        }
    }

    #[test]
    fn invalid_action_returns_error_text_and_counts() {
        let mut m = lab(3, 1);
        let out = m.step("teleport home").unwrap();
        assert_eq!(out.observation, NO_KNOWN_ACTION);
        assert_eq!(m.step_counter(), 1);
        assert_eq!(out.score, 0.0);
    }

    #[test]
    fn random_play_keeps_score_monotone() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for task in 0..45 {
            let mut m = lab(task, 2);
            let mut prev = 0.0;
            while !m.done() {
                let acts = m.admissible_actions();
                assert!(!acts.is_empty());
                let a = acts.choose(&mut rng).unwrap().clone();
                let s = m.step(&a).unwrap().score;
                assert!(s >= prev && s <= 1.0);
                prev = s;
            }
        }
    }

    #[test]
    fn water_boils_after_three_heated_steps() {
        let mut m = lab(2, 0);
        let mut seen = Vec::new();
        while !m.done() {
            let a = m.oracle_action().unwrap();
            m.step(&a).unwrap();
            seen.push(a);
        }
        let act = seen.iter().rposition(|a| a == "activate stove").unwrap();
        assert_eq!(&seen[act + 1..act + 3], ["wait", "wait"]);
        assert_eq!(seen[act + 3], "use thermometer on steam");
    }

    #[test]
    fn words_cover_all_observations() {
        let vocab: std::collections::HashSet<&str> = words().into_iter().collect();
        for task in 0..45 {
            let (mut env, instr, obs) = reset(&EnvSpec::new(EnvId::MiniLab, task, 3)).unwrap();
            let mut texts = vec![instr, obs];
            while !env.done() {
                let a = env.oracle_action().unwrap();
                texts.push(env.think_facts().key_fact);
                texts.push(env.step(&a).unwrap().observation);
                texts.push(a);
            }
            for t in texts {
                for w in crate::format::tokenize(&t) {
                    let number = w.parse::<u32>().is_ok_and(|n| n <= 100);
                    let punct = crate::format::PUNCTUATION
                        .iter()
                        .any(|p| w == p.to_string());
                    assert!(
                        vocab.contains(w.as_str()) || number || punct,
                        "{w:?} in {t:?}"
                    );
                }
            }
        }
    }
}
