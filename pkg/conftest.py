import os

import django

os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'seminas_project.settings')
django.setup()
