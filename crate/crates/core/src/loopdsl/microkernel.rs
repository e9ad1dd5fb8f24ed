use super::{BandMark, DslError, Loop, LoopNest, Node};

/// Inlines every microkernel call's loop-based body and marks the inlined
/// loops as a band. A nest without a call is returned unchanged.
pub fn substitute_microkernel(nest: &LoopNest) -> LoopNest {
    fn mark(l: &mut Loop, m: &BandMark) {
        l.band = Some(m.clone());
        for n in &mut l.body {
            if let Node::Loop(c) = n {
                mark(c, m);
            }
        }
    }
    fn walk(nodes: &[Node]) -> Vec<Node> {
        let mut out = Vec::with_capacity(nodes.len());
        for n in nodes {
            match n {
                Node::Microkernel(m) => {
                    let tag = BandMark { name: m.name.clone(), args: m.args.clone() };
                    for b in &m.body {
                        let mut b = b.clone();
                        if let Node::Loop(l) = &mut b {
                            mark(l, &tag);
                        }
                        out.push(b);
                    }
                }
                Node::Loop(l) => {
                    let mut l = l.clone();
                    l.body = walk(&l.body);
                    out.push(Node::Loop(l));
                }
                Node::Stmt(_) => out.push(n.clone()),
            }
        }
        out
    }
    if !nest.has_microkernel_call() {
        log::warn!("nest `{}` has no microkernel pragma; left unchanged", nest.name);
        return nest.clone();
    }
    LoopNest { body: walk(&nest.body), ..nest.clone() }
}

/// Replaces each marked band by an opaque microkernel call. Refuses when a
/// band is no longer an innermost, self-contained group of loops.
pub fn reinstate_microkernel(nest: &LoopNest) -> Result<LoopNest, DslError> {
    fn unmark(l: &Loop) -> Loop {
        let mut l = l.clone();
        l.band = None;
        l.body = l
            .body
            .iter()
            .map(|n| match n {
                Node::Loop(c) => Node::Loop(unmark(c)),
                other => other.clone(),
            })
            .collect();
        l
    }
    fn check_band(l: &Loop, tag: &BandMark) -> Result<(), DslError> {
        for n in &l.body {
            match n {
                Node::Loop(c) if c.band.as_ref() == Some(tag) => check_band(c, tag)?,
                Node::Loop(c) => {
                    return Err(DslError::Microkernel(format!(
                        "loop `{}` sits inside the `{}` band; the band is no longer innermost",
                        c.iter, tag.name
                    )))
                }
                Node::Microkernel(_) => {
                    return Err(DslError::Microkernel("nested microkernel call inside a band".into()))
                }
                Node::Stmt(_) => {}
            }
        }
        Ok(())
    }
    fn walk(nodes: &[Node], found: &mut bool) -> Result<Vec<Node>, DslError> {
        let mut out = Vec::with_capacity(nodes.len());
        for n in nodes {
            match n {
                Node::Loop(l) => match &l.band {
                    Some(tag) => {
                        check_band(l, tag)?;
                        *found = true;
                        out.push(Node::Microkernel(super::MicrokernelSpec {
                            name: tag.name.clone(),
                            args: tag.args.clone(),
                            body: vec![Node::Loop(unmark(l))],
                        }));
                    }
                    None => {
                        let mut l = l.clone();
                        l.body = walk(&l.body, found)?;
                        out.push(Node::Loop(l));
                    }
                },
                other => out.push(other.clone()),
            }
        }
        Ok(out)
    }
    let mut found = false;
    let body = walk(&nest.body, &mut found)?;
    if !found {
        return Err(DslError::Microkernel(format!("nest `{}` has no marked microkernel band", nest.name)));
    }
    Ok(LoopNest { body, ..nest.clone() })
}
