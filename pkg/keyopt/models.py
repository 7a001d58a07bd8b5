from django.db import models


class Run(models.Model):
    STATUS_RUNNING = "running"
    STATUS_OK = "ok"
    STATUS_FAILED = "failed"
    STATUS_CHOICES = [
        (STATUS_RUNNING, "Running"),
        (STATUS_OK, "Succeeded"),
        (STATUS_FAILED, "Failed"),
    ]

    command = models.CharField(max_length=40)
    config_hash = models.CharField(max_length=64)
    output_dir = models.CharField(max_length=500)
    status = models.CharField(max_length=10, choices=STATUS_CHOICES, default=STATUS_RUNNING)
    summary = models.TextField(blank=True)

    created_at = models.DateTimeField(auto_now_add=True)
    finished_at = models.DateTimeField(blank=True, null=True)

    class Meta:
        ordering = ["-created_at", "-id"]
        indexes = [
            models.Index(fields=["command", "created_at"], name="keyopt_run_command_idx"),
        ]

    def __str__(self):
        return f"{self.command} {self.config_hash[:12]} ({self.status})"


class Artifact(models.Model):
    run = models.ForeignKey(Run, on_delete=models.CASCADE, related_name="artifacts")
    name = models.CharField(max_length=200)
    sha256 = models.CharField(max_length=64)
    size = models.PositiveBigIntegerField()

    class Meta:
        ordering = ["name"]
        constraints = [
            models.UniqueConstraint(fields=["run", "name"], name="unique_artifact_per_run"),
        ]

    def __str__(self):
        return f"{self.name} ({self.sha256[:12]})"
