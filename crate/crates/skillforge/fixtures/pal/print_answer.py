total_jars = 144
jars_per_box = 12
price_per_box = 30
boxes = total_jars // jars_per_box
print(boxes * price_per_box)
