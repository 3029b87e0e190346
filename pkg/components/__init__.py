from components.assess import assess_page
from components.evaluate import evaluate_page
