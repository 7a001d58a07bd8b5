"""
Read-only helpers over the run registry.
Pure aggregation only, no writes.
"""

from django.db.models import Count, Max, Sum

from .models import Artifact, Run


def recent_runs(limit=20, command=None):
    """
    Most recent runs first, optionally for one command,
    each with its artifact count.
    """
    runs = Run.objects.annotate(artifact_count=Count("artifacts"))
    if command:
        runs = runs.filter(command=command)
    return list(runs.order_by("-created_at", "-id")[:limit])


def runs_by_command():
    """Run totals and last start time per command."""
    rows = (
        Run.objects.values("command")
        .annotate(total=Count("id"), last_run=Max("created_at"))
        .order_by("command")
    )
    return {row["command"]: {"total": row["total"], "last_run": row["last_run"]} for row in rows}


def runs_by_status():
    rows = Run.objects.values("status").annotate(total=Count("id")).order_by("status")
    return {row["status"]: row["total"] for row in rows}


def runs_with_config(config_hash):
    """Every run made from one validated configuration."""
    runs = Run.objects.annotate(artifact_count=Count("artifacts")).filter(config_hash=config_hash)
    return list(runs.order_by("created_at", "id"))


def artifact_totals():
    totals = Artifact.objects.aggregate(count=Count("id"), size=Sum("size"))
    return {"count": totals["count"] or 0, "bytes": totals["size"] or 0}
