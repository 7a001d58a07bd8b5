from django.apps import AppConfig


class KeyoptConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'keyopt'
    verbose_name = "Keypoint optimization"
